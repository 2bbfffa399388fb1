"""Acceptance suite: one test per primary criterion, each at its stated scale.

Every test records a ``PASS``/``FAIL`` line (shown in the terminal summary
under "acceptance criteria") before asserting.  The expensive artifacts
(2000-sample dataset, trained surrogate, 100-trial campaign) are built once
per session.
"""

import contextlib
import json
import os
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import conftest
from brgame import _frenet_py, kernels
from brgame.cli import main as cli_main
from brgame.dataset import BRArrays, generate_dataset
from brgame.equilibrium import BestResponseError, ExactBestResponse, exact_br, solve_ibr, solve_joint_kkt, solve_reduced
from brgame.game import Trajectory, nash_check
from brgame.harness import (
    MonteCarloConfig,
    dominant_failure,
    paired_dJ1,
    percentile,
    run_monte_carlo,
    sample_initial_conditions,
    summarize,
)
from brgame.nlp import SolverOptions, finite_diff_jacobian
from brgame.racing import RacingGame, default_racing_params
from brgame.seeding import derive_seed
from brgame.surrogate import (
    RolloutBinding,
    featurize,
    init_params,
    mlp_forward,
    network_jacobian,
    surrogate_jacobian,
    surrogate_rollout,
)
from brgame.toy import ToyBestResponse, ToyGame
from brgame.training import TrainingConfig, br_loss, br_loss_and_grad, split_indices, train, validation_metrics
from conftest import KERNEL_ARGS, metric_cases, random_inputs, random_states

P = default_racing_params()
B = P.bounds
BINDING = RolloutBinding(P.dt, P.track.R, P.vehicle.lf, P.vehicle.lr)

NASH_MASTER = 0
NASH_COUNT = 20
NASH_MAX_ATTEMPTS = 40
NASH_TIME_LIMIT = 30.0


@contextlib.contextmanager
def criterion(number, title):
    """Record one PASS/FAIL line; the body sets ``r["ok"]`` and ``r["detail"]``."""
    r = {"ok": False, "detail": ""}
    try:
        yield r
    except Exception as exc:
        r["ok"] = False
        r["detail"] = f"{r['detail']} [{type(exc).__name__}: {exc}]".strip()
        raise
    finally:
        conftest.ACCEPTANCE_LINES.append(
            (number, f"{'PASS' if r['ok'] else 'FAIL'}  C{number}: {title}  {r['detail']}"))


@pytest.fixture(scope="session", autouse=True)
def _single_thread():
    with threadpool_limits(limits=1):
        yield


# ----------------------------------------------------------------------------
# session artifacts
# ----------------------------------------------------------------------------

@pytest.fixture(scope="session")
def dataset():
    t0 = time.perf_counter()
    samples, rep = generate_dataset(2000, seed=0, params=P)
    return BRArrays.from_samples(samples), rep, time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained(dataset):
    data = dataset[0]
    cfg = TrainingConfig()
    res = train(data, cfg, bounds=(B.u_lower, B.u_upper), binding=BINDING)
    _, va = split_indices(len(data), cfg)
    return res, validation_metrics(res.params, data.subset(va), B.d_safe)


@pytest.fixture(scope="session")
def campaign(trained):
    cfg = MonteCarloConfig(n_trials=100, master_seed=0)
    t0 = time.perf_counter()
    results = run_monte_carlo(cfg, P, trained[0].params)
    return cfg, results, time.perf_counter() - t0


@pytest.fixture(scope="session")
def nash_instances():
    """First 20 instances (in seed-index order) where the reduced solve with the
    exact best response succeeds, plus a log of every attempt."""
    picked, log = [], []
    t0 = time.perf_counter()
    for i in range(NASH_MAX_ATTEMPTS):
        x1, x2 = sample_initial_conditions(derive_seed(NASH_MASTER, i), P)
        game = RacingGame(x1, x2, P)
        res = solve_reduced(game, ExactBestResponse(game), opts=SolverOptions(time_limit=NASH_TIME_LIMIT))
        log.append((i, res.status.value))
        if res.success:
            picked.append((i, game, res))
        if len(picked) == NASH_COUNT:
            break
    return picked, log, time.perf_counter() - t0


# ----------------------------------------------------------------------------
# criteria
# ----------------------------------------------------------------------------

def test_c1_toy_exactness():
    with criterion(1, "toy game (1/3, -1/3) by all three solvers") as r:
        opts = SolverOptions(tol=1e-12, max_outer=60)
        game = ToyGame()
        t0 = time.perf_counter()
        runs = {
            "reduced": solve_reduced(game, ExactBestResponse(game, opts), opts=opts),
            "ibr": solve_ibr(game, tol=1e-12, opts=opts),
            "joint": solve_joint_kkt(game, opts=opts),
        }
        elapsed = time.perf_counter() - t0
        err = max(max(abs(res.Z1.U[0, 0] - 1 / 3), abs(res.Z2.U[0, 0] + 1 / 3)) for res in runs.values())
        ok_status = all(res.success for res in runs.values())
        r["ok"] = ok_status and err <= 1e-8 and elapsed < 1.0
        r["detail"] = f"max error {err:.1e}, {elapsed:.3f}s"
        # the closed-form operator path through the same reduced solver
        red = solve_reduced(game, ToyBestResponse(game), opts=opts)
        r["ok"] &= red.success and abs(red.Z1.U[0, 0] - 1 / 3) <= 1e-8
    assert r["ok"], r["detail"]


def test_c2_reduced_exact_is_nash(nash_instances):
    with criterion(2, "reduced + exact BR solutions are local Nash") as r:
        picked, log, solve_time = nash_instances
        t0 = time.perf_counter()
        worst = 0.0
        infeasible = 0
        for i, game, res in picked:
            rep = nash_check(game, res.Z1, res.Z2, 1e-2, 200, seed=i)
            worst = max(worst, rep.max_J1_improvement, rep.max_J2_improvement)
            infeasible += not rep.candidate_feasible
        elapsed = solve_time + time.perf_counter() - t0
        skipped = [f"{i}:{s}" for i, s in log if s != "Succeeded"]
        r["ok"] = len(picked) == NASH_COUNT and infeasible == 0 and worst <= 1e-4 and elapsed < 600
        r["detail"] = (f"{len(picked)} instances from {len(log)} attempts (non-success {skipped}), "
                       f"picked {[i for i, _, _ in picked]}, "
                       f"max improvement {worst:.1e}, {elapsed:.0f}s")
    assert r["ok"], r["detail"]


def test_c3_ibr_fixed_point(nash_instances):
    with criterion(3, "IBR converged points are exact-BR fixed points") as r:
        picked = nash_instances[0]
        worst, converged, br_fail = 0.0, 0, 0
        for _, game, _ in picked:
            res = solve_ibr(game)
            if not res.success:
                continue
            converged += 1
            try:
                d2 = np.max(np.abs(exact_br(game, 2, res.Z1).flatten() - res.Z2.flatten()))
                d1 = np.max(np.abs(exact_br(game, 1, res.Z2).flatten() - res.Z1.flatten()))
                worst = max(worst, d1, d2)
            except BestResponseError:
                br_fail += 1
        r["ok"] = len(picked) == NASH_COUNT and converged > 0 and br_fail == 0 and worst <= 1e-5
        r["detail"] = f"IBR converged on {converged}/{len(picked)}, max block residual {worst:.1e}"
    assert r["ok"], r["detail"]


def test_c4_derivative_oracles():
    with criterion(4, "analytic derivatives match finite differences") as r:
        rng = np.random.default_rng(2024)
        n = 1000
        errs = {}

        # dynamics: one-step Jacobians, both kernel backends
        X, U = random_states(rng, n), random_inputs(rng, n)
        for name, mod in (("dyn", kernels), ("dyn-py", _frenet_py)):
            _, A, Bm = mod.step_jac(X, U, *KERNEL_ARGS)
            errs[name] = max(
                np.max(np.abs(np.c_[A[k], Bm[k]] - finite_diff_jacobian(
                    lambda w: mod.step(w[None, :4], w[None, 4:], *KERNEL_ARGS)[0], np.r_[X[k], U[k]])))
                for k in range(n))

        # constraints: defect and collision Jacobians at random trajectory pairs
        game = RacingGame(np.array([1.0, 0.0, 1.0, 0.1]), np.array([1.1, 0.0, 1.2, -0.1]), P)
        e_def = e_col = 0.0
        for _ in range(n):
            X1, X2 = random_states(rng, 11), random_states(rng, 11)
            # keep the pair within collision range so the constraint has curvature
            X2[:, 2] = X1[:, 2] + rng.uniform(-0.3, 0.3, 11)
            z1 = Trajectory(X1, random_inputs(rng, 10)).flatten()
            z2 = Trajectory(X2, random_inputs(rng, 10)).flatten()
            e_def = max(e_def, np.max(np.abs(game.defects_jac(1, z1) - finite_diff_jacobian(
                lambda w: game.defects(1, w), z1))))
            z = np.r_[z1, z2]
            m = z1.size
            e_col = max(e_col, np.max(np.abs(game.ineq_jac(1, z1, z2) - finite_diff_jacobian(
                lambda w: game.ineq(1, w[:m], w[m:]), z))))
        errs["defects"], errs["collision"] = e_def, e_col

        # surrogate: network and network+rollout, 50 random networks x 20 points
        e_net = e_roll = 0.0
        for net in range(50):
            p = init_params(P.N, seed=net, bounds=(B.u_lower, B.u_upper), binding=BINDING,
                            feat_mean=rng.normal(0, 0.5, 48), feat_std=rng.uniform(0.3, 2.0, 48))
            for _ in range(20):
                x1, x2 = sample_initial_conditions(int(rng.integers(2**63)), P)
                X1 = game.rollout(1, x1, random_inputs(rng, P.N))
                phi = featurize(x2, X1)
                e_net = max(e_net, np.max(np.abs(network_jacobian(p, phi) - finite_diff_jacobian(
                    lambda w: mlp_forward(p, w[None, :])[0], phi))))
                e_roll = max(e_roll, np.max(np.abs(surrogate_jacobian(p, x2, X1) - finite_diff_jacobian(
                    lambda w: surrogate_rollout(p, x2, w.reshape(X1.shape)).flatten(), X1.ravel()))))
        errs["network"], errs["net+rollout"] = e_net, e_roll

        # training loss gradient, small networks, relative error
        worst_rel = 0.0
        samples, _ = generate_dataset(6, seed=77, params=P)
        data = BRArrays.from_samples(samples)
        data.X1[:2] = data.X2[:2] + rng.normal(0, 0.02, data.X2[:2].shape)
        cfg = TrainingConfig()
        for net in range(5):
            p = init_params(P.N, (8, 8, 4), seed=100 + net, feat_std=rng.uniform(0.5, 2, 48))
            for b in p.biases:
                b[...] = rng.normal(0, 0.1, b.shape)
            _, grads = br_loss_and_grad(p, data, cfg)
            for layer in range(len(p.weights)):
                for arr, g in ((p.weights[layer], grads[layer][0]), (p.biases[layer], grads[layer][1])):
                    for idx in zip(*[rng.integers(0, s, 4) for s in arr.shape]):
                        o = arr[idx]
                        arr[idx] = o + 1e-6
                        lp = br_loss(p, data, cfg)
                        arr[idx] = o - 1e-6
                        lm = br_loss(p, data, cfg)
                        arr[idx] = o
                        fd = (lp - lm) / 2e-6
                        worst_rel = max(worst_rel, abs(fd - g[idx]) / max(abs(fd), 1e-3))
        r["ok"] = max(errs.values()) <= 1e-5 and worst_rel <= 1e-4
        r["detail"] = ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f", loss grad rel {worst_rel:.1e}"
    assert r["ok"], r["detail"]


def test_c5_constructive_feasibility():
    with criterion(5, "surrogate output is dynamically feasible and inside the input box") as r:
        rng = np.random.default_rng(55)
        game = RacingGame(np.array([1.0, 0.0, 1.0, 0.1]), np.array([1.1, 0.0, 1.2, -0.1]), P)
        defect_viol = bound_viol = 0
        n = 10_000
        for k in range(n):
            if k % 100 == 0:
                # arbitrary parameters: random architecture, weight scale over five decades
                hidden = tuple(int(h) for h in rng.integers(2, 64, rng.integers(1, 4)))
                p = init_params(P.N, hidden, bounds=(B.u_lower, B.u_upper), binding=BINDING,
                                seed=int(rng.integers(2**31)), feat_mean=rng.normal(0, 2, 48),
                                feat_std=rng.uniform(0.01, 5, 48))
                for W, b in zip(p.weights, p.biases):
                    W *= 10.0 ** rng.uniform(-2, 3)
                    b[...] = rng.normal(0, 10.0 ** rng.uniform(-2, 2), b.shape)
            x1, x2 = sample_initial_conditions(int(rng.integers(2**63)), P)
            X1 = game.rollout(1, x1, random_inputs(rng, P.N))
            Z = surrogate_rollout(p, x2, X1)
            defect_viol += bool(np.any(game.defects(2, Z.flatten()) != 0.0)) or not np.array_equal(Z.X[0], x2)
            bound_viol += not (np.all(Z.U > B.u_lower) and np.all(Z.U < B.u_upper))
        r["ok"] = defect_viol == 0 and bound_viol == 0
        r["detail"] = f"{n} draws, {defect_viol} nonzero defects, {bound_viol} bound violations"
    assert r["ok"], r["detail"]


def test_c6_metric_micro_suite():
    with criterion(6, "metric micro-suite reproduces hand values") as r:
        cases = metric_cases()
        bad = [name for name, got, want in cases
               if not np.allclose(got, want, rtol=0, atol=1e-12)]
        r["ok"] = not bad
        r["detail"] = f"{len(cases) - len(bad)}/{len(cases)} cases" + (f", failed {bad}" if bad else "")
    assert r["ok"], r["detail"]


def test_c7_surrogate_quality(dataset, trained):
    with criterion(7, "surrogate validation RMSE at M=2000, 150 epochs") as r:
        res, m = trained
        r["ok"] = (m.rmse_position <= 0.10 and m.rmse_a <= 0.5 and m.rmse_delta <= 0.2
                   and res.wall_time < 1800 and len(res.history) == 151)
        r["detail"] = (f"position {m.rmse_position:.4f} m, a {m.rmse_a:.4f}, delta {m.rmse_delta:.4f}, "
                       f"training {res.wall_time:.0f}s (data {dataset[2]:.0f}s, "
                       f"discard {dataset[1].discard_rate:.3f}), best epoch {res.best_epoch}")
    assert r["ok"], r["detail"]


def test_c8_monte_carlo(campaign):
    with criterion(8, "100 paired trials, qualitative outcome") as r:
        cfg, results, elapsed = campaign
        summ = summarize(results, "ibr")
        red = summ["reduced"]
        dJ = paired_dJ1(results, "reduced", "ibr")
        by = {(x.trial_id, x.method): x for x in results}
        paired_ids = [t for t in range(cfg.n_trials)
                      if by[(t, "reduced")].success and by[(t, "ibr")].success]
        ref = percentile([abs(by[(t, "ibr")].J1) for t in paired_ids], 50)
        med = percentile(dJ, 50)
        worst_inf = max((x.s_infeas for x in results if x.success), default=0.0)
        checks = {
            "a": red.success_pct >= 50.0,
            "b": dominant_failure(red) in (None, "InfeasibleDetected"),
            "c": med is not None and abs(med) <= 0.2 * ref,
            "d": worst_inf <= 1e-5,
            "time": elapsed < 1800,
        }
        r["ok"] = all(checks.values())
        r["detail"] = (f"reduced success {red.success_pct:.0f}% statuses {red.status_counts}; "
                       f"median dJ1 {med:.2e} vs median |J1| {ref:.3f} on {len(dJ)} pairs; "
                       f"max s_infeas {worst_inf:.1e}; {elapsed:.0f}s; "
                       + " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert r["ok"], r["detail"]


TIMING_KEYS = {"wall_time", "median_time", "p95_time"}


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _artifact_digest(out_dir):
    """``{relative path: comparable content}``; timing fields and files are dropped."""
    out = {}
    for root, _, files in os.walk(out_dir):
        for f in sorted(files):
            rel = os.path.relpath(os.path.join(root, f), out_dir)
            name = os.path.basename(rel)
            if name.startswith((".", "ecdf_time_", "hist_time_")):
                continue
            path = os.path.join(root, f)
            if name.endswith(".json"):
                out[rel] = _strip_timing(json.load(open(path)))
            elif name.endswith(".jsonl"):
                out[rel] = [_strip_timing(json.loads(line)) for line in open(path)]
            elif name == "summary.csv":
                rows = [line.split(",") for line in open(path).read().splitlines()]
                keep = [j for j, c in enumerate(rows[0]) if c not in TIMING_KEYS]
                out[rel] = [[row[j] for j in keep if j < len(row)] for row in rows]
            else:
                out[rel] = open(path, "rb").read()
    return out


def test_c9_determinism(tmp_path, dataset, trained, campaign):
    with criterion(9, "repeated stages give identical artifacts") as r:
        ini = tmp_path / "small.ini"
        ini.write_text("[dataset]\nn_samples = 12\nseed = 9\n[training]\nepochs = 5\nbatch_size = 4\n"
                       "hidden = 16,8\n[solver]\ntime_limit = 20\n[montecarlo]\nn_trials = 3\n")
        digests = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert cli_main(["pipeline", "--config", str(ini), "--output-dir", str(out)]) == 0
            digests.append(_artifact_digest(out))
        same_pipeline = digests[0] == digests[1]
        binary_same = (open(tmp_path / "a" / "surrogate.bin", "rb").read()
                       == open(tmp_path / "b" / "surrogate.bin", "rb").read())

        # the session-scale artifacts: regenerate a dataset prefix and repeat ten trials
        data = dataset[0]
        again, _ = generate_dataset(40, seed=0, params=P)
        prefix_same = all(np.array_equal(s.X2, data.X2[i]) and np.array_equal(s.U2, data.U2[i])
                          for i, s in enumerate(again))
        cfg, results, _ = campaign
        rerun = run_monte_carlo(MonteCarloConfig(n_trials=10, master_seed=cfg.master_seed), P, trained[0].params)
        mc_same = [x.comparable() for x in rerun] == [x.comparable() for x in results[:len(rerun)]]
        r["ok"] = same_pipeline and binary_same and prefix_same and mc_same
        r["detail"] = (f"pipeline files {len(digests[0])} identical={same_pipeline}, "
                       f"dataset prefix identical={prefix_same}, 10-trial rerun identical={mc_same}")
    assert r["ok"], r["detail"]
