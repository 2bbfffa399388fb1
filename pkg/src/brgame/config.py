"""Run configuration: an INI file whose defaults reproduce the benchmark setup.

Every key has a default, so an empty file is a valid configuration.  Unknown
sections or keys are rejected so that typos fail loudly.  The effective
configuration can be written back out with :func:`dump_config`, and reloading
that file yields an identical :class:`RunConfig`.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass

from brgame.errors import ConfigError
from brgame.frenet import Bounds, TrackParams, VehicleParams
from brgame.harness import METHODS, MonteCarloConfig
from brgame.nlp import SolverOptions
from brgame.racing import CostWeights, RacingParams
from brgame.training import TrainingConfig

ENV_OUTPUT_DIR = "BRGAME_OUTPUT_DIR"

# section -> key -> (type, default)
SCHEMA = {
    "game": {
        "N": (int, 10),
        "dt": (float, 0.05),
        "track_radius": (float, 3.5),
        "lf": (float, 0.13),
        "lr": (float, 0.13),
        "v_max": (float, 2.0),
        "t_max": (float, 0.5),
        "a_max": (float, 2.0),
        "delta_max_deg": (float, 25.0),
        "d_safe": (float, 0.25),
        "r_a": (float, 0.02),
        "r_delta": (float, 0.2),
        "p_a": (float, 0.02),
        "p_delta": (float, 0.2),
        "q_v": (float, 0.01),
        "q_self": (float, 1.0),
        "q_other": (float, 0.5),
    },
    "solver": {
        "tol": (float, 1e-6),
        "max_outer": (int, 40),
        "max_inner": (int, 150),
        "time_limit": (float, 60.0),
    },
    "dataset": {
        "n_samples": (int, 2000),
        "seed": (int, 0),
        "workers": (int, 1),
    },
    "training": {
        "lr": (float, 3e-4),
        "weight_decay": (float, 1e-4),
        "batch_size": (int, 256),
        "epochs": (int, 150),
        "grad_clip": (float, 5.0),
        "gamma": (float, 0.92),
        "lam_u": (float, 30.0),
        "lam_x": (float, 150.0),
        "lam_g": (float, 50.0),
        "train_frac": (float, 0.8),
        "seed": (int, 0),
        "hidden": (str, "128,128,64"),
    },
    "montecarlo": {
        "n_trials": (int, 100),
        "methods": (str, ",".join(METHODS)),
        "master_seed": (int, 0),
        "workers": (int, 1),
        "psi_range": (float, 0.5),
        "baseline": (str, "ibr"),
        "keep_trajectories": (bool, False),
    },
    "run": {
        "output_dir": (str, ""),
        "single_thread": (bool, True),
    },
}


@dataclass(frozen=True)
class RunConfig:
    values: tuple  # ((section, ((key, value), ...)), ...)

    def get(self, section: str, key: str):
        return dict(dict(self.values)[section])[key]

    def section(self, name: str) -> dict:
        return dict(dict(self.values)[name])

    # --- derived objects ---------------------------------------------------
    def racing_params(self) -> RacingParams:
        g = self.section("game")
        track = TrackParams(g["track_radius"])
        bounds = Bounds(
            state_lower=(0.0, -math.pi, 0.0, -g["t_max"]),
            state_upper=(g["v_max"], math.pi, track.s_max, g["t_max"]),
            input_lower=(-g["a_max"], -math.radians(g["delta_max_deg"])),
            input_upper=(g["a_max"], math.radians(g["delta_max_deg"])),
            d_safe=g["d_safe"],
        )
        w = CostWeights((g["r_a"], g["r_delta"]), (g["p_a"], g["p_delta"]), g["q_v"], g["q_self"], g["q_other"])
        return RacingParams(track, VehicleParams(g["lf"], g["lr"]), bounds, g["N"], g["dt"], (w, w))

    def solver_options(self) -> SolverOptions:
        s = self.section("solver")
        return SolverOptions(tol=s["tol"], max_outer=s["max_outer"], max_inner=s["max_inner"],
                             time_limit=s["time_limit"])

    def training_config(self) -> TrainingConfig:
        t = self.section("training")
        hidden = tuple(int(h) for h in t.pop("hidden").split(",") if h.strip())
        return TrainingConfig(d_safe=self.get("game", "d_safe"), hidden=hidden, **t)

    def montecarlo_config(self) -> MonteCarloConfig:
        m = self.section("montecarlo")
        s = self.section("solver")
        methods = tuple(x.strip() for x in m["methods"].split(",") if x.strip())
        return MonteCarloConfig(n_trials=m["n_trials"], methods=methods, master_seed=m["master_seed"],
                                workers=m["workers"], time_limit=s["time_limit"], tol=s["tol"],
                                psi_range=m["psi_range"], keep_trajectories=m["keep_trajectories"])

    def output_dir(self) -> str:
        return self.get("run", "output_dir") or os.environ.get(ENV_OUTPUT_DIR, "") or "brgame_out"

    def hash(self, *sections) -> str:
        """Stable digest of the given sections (all when none are named)."""
        names = sections or tuple(SCHEMA)
        payload = {s: self.section(s) for s in names}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _parse(kind, raw: str, where: str):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _validate(cfg: RunConfig) -> RunConfig:
    try:
        cfg.racing_params()
        cfg.solver_options()
        cfg.training_config()
        mc = cfg.montecarlo_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.get("dataset", "n_samples") < 1:
        raise ConfigError("dataset.n_samples must be at least 1")
    if cfg.get("dataset", "workers") < 1:
        raise ConfigError("dataset.workers must be at least 1")
    if cfg.get("montecarlo", "baseline") not in mc.methods:
        raise ConfigError("montecarlo.baseline must be one of the configured methods")
    return cfg


def config_from_mapping(data: dict) -> RunConfig:
    """Build a config from ``{section: {key: value or str}}``, filling defaults."""
    for sec in data:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    out = []
    for sec, keys in SCHEMA.items():
        given = {k: v for k, v in data.get(sec, {}).items()}
        lookup = {k.lower(): k for k in keys}
        resolved = {}
        for k, v in given.items():
            if k.lower() not in lookup:
                raise ConfigError(f"unknown key {k!r} in [{sec}]")
            name = lookup[k.lower()]
            kind = keys[name][0]
            resolved[name] = _parse(kind, v, f"[{sec}] {name}") if isinstance(v, str) and kind is not str else v
        row = tuple((k, resolved.get(k, default)) for k, (_, default) in keys.items())
        out.append((sec, row))
    return _validate(RunConfig(tuple(out)))


def load_config(path=None, overrides=None) -> RunConfig:
    """Read an INI file (or defaults when ``path`` is None) plus ``section.key=value`` overrides."""
    data = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data = {s: dict(cp.items(s)) for s in cp.sections()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        data.setdefault(sec.strip(), {})[key.strip()] = value
    return config_from_mapping(data)


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, row in cfg.values:
        cp[sec] = {k: (repr(v) if isinstance(v, float) else str(v)) for k, v in row}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
