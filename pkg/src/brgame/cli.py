"""Command-line entry point.

Exit codes: 0 success, 1 a check or stage failed, 2 usage or configuration error.
Artifacts go to ``--output-dir``, else ``[run] output_dir``, else the
``BRGAME_OUTPUT_DIR`` environment variable, else ``./brgame_out``.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from brgame.errors import ConfigError, SamplingError, TrainingError

log = logging.getLogger("brgame")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ARTIFACTS = {
    "config": "effective_config.ini",
    "dataset": "dataset.jsonl",
    "dataset_report": "dataset_report.json",
    "params": "surrogate.bin",
    "training": "training.json",
    "validation": "validation.json",
    "results": "mc_results.jsonl",
    "summary": "summary.csv",
    "report": "report",
}

# stage -> config sections its outputs depend on
STAGES = {
    "generate-dataset": ("game", "dataset"),
    "train": ("game", "dataset", "training"),
    "validate": ("game", "dataset", "training"),
    "montecarlo": ("game", "dataset", "training", "solver", "montecarlo"),
    "report": ("game", "dataset", "training", "solver", "montecarlo"),
}
STAGE_OUTPUTS = {
    "generate-dataset": ("dataset", "dataset_report"),
    "train": ("params", "training"),
    "validate": ("validation",),
    "montecarlo": ("results",),
    "report": ("summary", "report"),
}


class Context:
    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)

    def path(self, key: str) -> str:
        return os.path.join(self.out_dir, ARTIFACTS[key])


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _single_thread(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


# ----------------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------------

def stage_generate(ctx: Context, args=None) -> int:
    from brgame.dataset import generate_dataset, write_jsonl

    d = ctx.cfg.section("dataset")
    n = getattr(args, "n_samples", None) or d["n_samples"]
    seed = d["seed"] if getattr(args, "seed", None) is None else args.seed
    workers = getattr(args, "workers", None) or d["workers"]
    samples, rep = generate_dataset(n, seed, ctx.cfg.racing_params(), workers)
    out = getattr(args, "out", None) or ctx.path("dataset")
    write_jsonl(samples, out)
    _write_json(ctx.path("dataset_report"), rep.to_dict())
    print(f"wrote {len(samples)} samples to {out} (discard rate {rep.discard_rate:.3f})")
    return EXIT_OK if len(samples) == n else EXIT_FAIL


def _load_arrays(path):
    from brgame.dataset import BRArrays, read_jsonl

    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path} (run generate-dataset first)")
    return BRArrays.from_samples(read_jsonl(path))


def _binding(params):
    from brgame.surrogate import RolloutBinding

    return RolloutBinding(params.dt, params.track.R, params.vehicle.lf, params.vehicle.lr)


def stage_train(ctx: Context, args=None) -> int:
    from brgame.surrogate import save_params
    from brgame.training import train

    data = _load_arrays(getattr(args, "dataset", None) or ctx.path("dataset"))
    tcfg = ctx.cfg.training_config()
    rp = ctx.cfg.racing_params()
    b = rp.bounds
    res = train(data, tcfg, bounds=(b.u_lower, b.u_upper), binding=_binding(rp))
    out = getattr(args, "out", None) or ctx.path("params")
    save_params(res.params, out)
    _write_json(ctx.path("training"), {
        "config": tcfg.to_dict(),
        "best_epoch": res.best_epoch,
        "best_val_loss": res.best_val_loss,
        "initial_val_loss": res.initial_val_loss,
        "history": [list(h) for h in res.history],
        "wall_time": res.wall_time,
    })
    print(f"trained {len(res.history) - 1} epochs; best val loss {res.best_val_loss:.6g} "
          f"at epoch {res.best_epoch}; wrote {out}")
    return EXIT_OK


def _load_surrogate(path):
    from brgame.surrogate import load_params

    if not os.path.exists(path):
        raise ConfigError(f"surrogate parameter file not found: {path} (run train first)")
    return load_params(path)


def stage_validate(ctx: Context, args=None) -> int:
    from brgame.training import split_indices, validation_metrics

    data = _load_arrays(getattr(args, "dataset", None) or ctx.path("dataset"))
    p = _load_surrogate(getattr(args, "params", None) or ctx.path("params"))
    _, va = split_indices(len(data), ctx.cfg.training_config())
    m = validation_metrics(p, data.subset(va), ctx.cfg.get("game", "d_safe"))
    _write_json(ctx.path("validation"), m.to_dict())
    for k, v in m.to_dict().items():
        print(f"{k:>24}: {v:.6g}" if isinstance(v, float) else f"{k:>24}: {v}")
    return EXIT_OK


def stage_montecarlo(ctx: Context, args=None) -> int:
    from brgame.harness import run_monte_carlo, summarize, write_results_jsonl, write_summary_csv

    mc = ctx.cfg.montecarlo_config()
    if getattr(args, "workers", None):
        mc = type(mc)(**{**mc.__dict__, "workers": args.workers})
    if getattr(args, "n_trials", None):
        mc = type(mc)(**{**mc.__dict__, "n_trials": args.n_trials})
    surrogate = None
    if "reduced" in mc.methods:
        surrogate = _load_surrogate(getattr(args, "params", None) or ctx.path("params"))
    t0 = time.perf_counter()
    results = run_monte_carlo(mc, ctx.cfg.racing_params(), surrogate)
    write_results_jsonl(results, ctx.path("results"))
    summary = summarize(results, ctx.cfg.get("montecarlo", "baseline"))
    write_summary_csv(summary, ctx.path("summary"))
    for s in summary.values():
        print(f"{s.method:>8}: success {s.success_pct:5.1f}%  median time {s.median_time}  "
              f"statuses {s.status_counts}")
    print(f"{len(results)} trials in {time.perf_counter() - t0:.1f}s; wrote {ctx.path('results')}")
    return EXIT_OK


def stage_report(ctx: Context, args=None) -> int:
    from brgame.harness import read_results_jsonl, write_report, write_summary_csv, summarize

    path = getattr(args, "results", None) or ctx.path("results")
    if not os.path.exists(path):
        raise ConfigError(f"results file not found: {path} (run montecarlo first)")
    results = read_results_jsonl(path)
    baseline = ctx.cfg.get("montecarlo", "baseline")
    written = write_report(results, ctx.path("report"), baseline)
    write_summary_csv(summarize(results, baseline), ctx.path("summary"))
    print(f"wrote {len(written)} report files under {ctx.path('report')}")
    return EXIT_OK


STAGE_FUNCS = {
    "generate-dataset": stage_generate,
    "train": stage_train,
    "validate": stage_validate,
    "montecarlo": stage_montecarlo,
    "report": stage_report,
}


def _stamp_path(ctx, stage):
    return os.path.join(ctx.out_dir, f".{stage}.stamp")


def stage_current(ctx: Context, stage: str) -> bool:
    """True when the stage's outputs exist and were produced under the same config hash."""
    try:
        with open(_stamp_path(ctx, stage)) as fh:
            stamp = json.load(fh)
    except (OSError, ValueError):
        return False
    if stamp.get("hash") != ctx.cfg.hash(*STAGES[stage]):
        return False
    return all(os.path.exists(ctx.path(k)) for k in STAGE_OUTPUTS[stage])


def run_pipeline(ctx: Context, force: bool = False) -> int:
    stale = force
    for stage in STAGES:
        if not stale and stage_current(ctx, stage):
            print(f"[{stage}] up to date, skipped")
            continue
        # once a stage reruns, everything downstream reruns too
        stale = True
        print(f"[{stage}] running")
        try:
            code = STAGE_FUNCS[stage](ctx)
        except Exception as exc:  # noqa: BLE001 - report the stage and its artifacts
            outs = ", ".join(ctx.path(k) for k in STAGE_OUTPUTS[stage])
            print(f"[{stage}] failed: {type(exc).__name__}: {exc} (artifacts: {outs})", file=sys.stderr)
            return EXIT_FAIL
        if code != EXIT_OK:
            print(f"[{stage}] failed with exit code {code}", file=sys.stderr)
            return code
        _write_json(_stamp_path(ctx, stage), {"stage": stage, "hash": ctx.cfg.hash(*STAGES[stage])})
    return EXIT_OK


# ----------------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------------

def _parse_state(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ConfigError(f"state {text!r} must have 4 comma-separated values (v,psi,s,t)")
    return np.array(vals)


def cmd_solve(ctx: Context, args) -> int:
    from brgame.harness import TrialSpec, initial_pair_ok, run_trial, sample_initial_conditions
    from brgame.toy import ToyBestResponse, ToyGame

    opts = ctx.cfg.solver_options()
    if args.toy:
        # the scalar game is cheap, so solve it to near machine precision
        opts = dataclasses.replace(opts, tol=min(opts.tol, 1e-12))
        game = ToyGame()
        br = ToyBestResponse(game) if args.method == "reduced" else None
        spec = TrialSpec(0, 0, game.x0[0], game.x0[1], args.method, opts)
        res = run_trial(spec, game=game, br=br, keep_trajectories=True)
        v1, v2 = res.Z1["U"][0][0], res.Z2["U"][0][0]
        print(f"status {res.status}  (v1, v2) = ({v1:.10f}, {v2:.10f})  J1 {res.J1:.6f}")
    else:
        params = ctx.cfg.racing_params()
        if (args.x1 is None) != (args.x2 is None):
            raise ConfigError("give both --x1 and --x2, or neither")
        if args.x1 is not None:
            x1, x2 = _parse_state(args.x1), _parse_state(args.x2)
            if not initial_pair_ok(x1, x2, params):
                print("warning: explicit initial states violate the sampling window; solving anyway",
                      file=sys.stderr)
        else:
            x1, x2 = sample_initial_conditions(args.seed, params, ctx.cfg.get("montecarlo", "psi_range"))
        br = None
        if args.method == "reduced":
            br = "exact" if args.exact_br else _load_surrogate(args.params or ctx.path("params"))
        spec = TrialSpec(0, args.seed, x1, x2, args.method, opts)
        res = run_trial(spec, br=br, params=params, keep_trajectories=True)
        print(f"status {res.status}  time {res.wall_time:.3f}s  J1 {res.J1}  margin {res.min_margin:.4f}  "
              f"br_residual {res.br_residual}  s_infeas {res.s_infeas:.2e}")
    out = args.out or os.path.join(ctx.out_dir, f"solve_{args.method}.json")
    _write_json(out, res.to_dict())
    print(f"wrote {out}")
    return EXIT_OK if res.success else EXIT_FAIL


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")
    common.add_argument("--output-dir", help="artifact directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="brgame", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("selftest", parents=[common], help="run the built-in checks")

    p = sub.add_parser("generate-dataset", parents=[common], help="label best-response samples")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")

    p = sub.add_parser("train", parents=[common], help="train the surrogate")
    p.add_argument("--dataset")
    p.add_argument("--out")

    p = sub.add_parser("validate", parents=[common], help="validation metrics of a trained surrogate")
    p.add_argument("--dataset")
    p.add_argument("--params")

    p = sub.add_parser("solve", parents=[common], help="solve one instance")
    p.add_argument("--method", choices=["reduced", "ibr", "joint"], default="reduced")
    p.add_argument("--seed", type=int, default=0, help="initial-condition seed")
    p.add_argument("--x1", help="Player 1 initial state v,psi,s,t")
    p.add_argument("--x2", help="Player 2 initial state v,psi,s,t")
    p.add_argument("--toy", action="store_true", help="solve the scalar toy game instead (tolerance 1e-12)")
    p.add_argument("--exact-br", action="store_true", help="reduced method with the exact best response")
    p.add_argument("--params")
    p.add_argument("--out")

    p = sub.add_parser("montecarlo", parents=[common], help="paired Monte Carlo campaign")
    p.add_argument("--params")
    p.add_argument("--workers", type=int)
    p.add_argument("--n-trials", type=int)

    p = sub.add_parser("report", parents=[common], help="histogram/ECDF data from results")
    p.add_argument("--results")

    p = sub.add_parser("pipeline", parents=[common], help="all stages with resume")
    p.add_argument("--force", action="store_true", help="rerun every stage")
    return ap


def main(argv=None) -> int:
    from brgame.config import dump_config, load_config

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        out_dir = args.output_dir or cfg.output_dir()
        ctx = Context(cfg, out_dir)
        with open(ctx.path("config"), "w") as fh:
            fh.write(dump_config(cfg))
        with _single_thread(cfg.get("run", "single_thread")):
            if args.command == "selftest":
                from brgame.selftest import run_selftest

                return EXIT_OK if run_selftest() else EXIT_FAIL
            if args.command == "solve":
                return cmd_solve(ctx, args)
            if args.command == "pipeline":
                return run_pipeline(ctx, args.force)
            return STAGE_FUNCS[args.command](ctx, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
