"""Monte Carlo benchmark: sampling, trials, ex-post diagnostics and summaries.

Diagnostics are computed from returned trajectories only, so every method is
scored the same way:

* ``e_dyn``: largest one-step dynamics defect (inf-norm), both players;
* ``e_col``: worst squared-distance violation ``max(0, d_safe^2 - |p1-p2|^2)``;
* ``e_bnd``: largest box-bound excess over states and inputs of both players
  (heading excluded: it lives on the circle and the dynamics wrap it);
* ``s_infeas = max(e_dyn, e_col, e_bnd)``.

Percentiles use linear interpolation between order statistics: for sorted
``x_0..x_{n-1}`` the ``q``-th percentile is taken at position ``q/100 (n-1)``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from brgame.equilibrium import (
    BestResponseOperator,
    ExactBestResponse,
    initial_guess,
    solve_ibr,
    solve_joint_kkt,
    solve_reduced,
)
from brgame.errors import ConfigError, ContractError, SamplingError
from brgame.frenet import frenet_to_cartesian
from brgame.game import GameSpec, Trajectory
from brgame.nlp import SolverOptions, Status
from brgame.racing import RacingGame, RacingParams, default_racing_params
from brgame.seeding import derive_seed
from brgame.surrogate import LearnedBestResponse, SurrogateParams

log = logging.getLogger(__name__)

METHODS = ("reduced", "ibr", "joint")
PROXIMITY = 0.7
SAMPLE_BUDGET = 100_000


# ----------------------------------------------------------------------------
# initial conditions
# ----------------------------------------------------------------------------

def sampling_box(params: RacingParams | None = None, psi_range: float = 0.5):
    """Lower/upper corners of the state box used for initial conditions.

    Progress is capped so that an ``N``-step horizon at top speed stays on
    the arc; the heading is drawn within ``+-psi_range`` of the track tangent.
    """
    p = params or default_racing_params()
    b = p.bounds
    lo = b.x_lower.copy()
    hi = b.x_upper.copy()
    hi[2] = b.x_upper[2] - b.x_upper[0] * p.N * p.dt
    lo[1] = max(lo[1], -psi_range)
    hi[1] = min(hi[1], psi_range)
    if hi[2] <= lo[2]:
        raise ContractError("horizon does not fit on the track")
    return lo, hi


def _separation(x1, x2, track) -> float:
    p1 = frenet_to_cartesian(x1[2], x1[3], track)
    p2 = frenet_to_cartesian(x2[2], x2[3], track)
    return math.hypot(p1[0] - p2[0], p1[1] - p2[1])


def initial_pair_ok(x1, x2, params: RacingParams | None = None, proximity: float = PROXIMITY) -> bool:
    p = params or default_racing_params()
    b = p.bounds
    for x in (x1, x2):
        if np.any(x < b.x_lower) or np.any(x > b.x_upper):
            return False
    d = _separation(x1, x2, p.track)
    return b.d_safe <= d <= proximity


def sample_initial_conditions(seed: int, params: RacingParams | None = None,
                              psi_range: float = 0.5, proximity: float = PROXIMITY,
                              budget: int = SAMPLE_BUDGET):
    """Rejection-sample ``(x1_0, x2_0)`` uniformly in the box, subject to
    ``d_safe <= |p1 - p2| <= proximity``."""
    p = params or default_racing_params()
    lo, hi = sampling_box(p, psi_range)
    rng = np.random.default_rng(seed)
    for _ in range(budget):
        x1 = rng.uniform(lo, hi)
        x2 = rng.uniform(lo, hi)
        if initial_pair_ok(x1, x2, p, proximity):
            return x1, x2
    raise SamplingError(f"no admissible initial pair within {budget} draws (seed {seed})")


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Infeasibility:
    e_dyn: float
    e_col: float
    e_bnd: float

    @property
    def s_infeas(self) -> float:
        return max(self.e_dyn, self.e_col, self.e_bnd)

    def excess(self, eps: float) -> "Infeasibility":
        """Components beyond tolerance ``eps``, clamped at zero."""
        return Infeasibility(max(0.0, self.e_dyn - eps), max(0.0, self.e_col - eps), max(0.0, self.e_bnd - eps))

    def to_dict(self) -> dict:
        return {"e_dyn": self.e_dyn, "e_col": self.e_col, "e_bnd": self.e_bnd, "s_infeas": self.s_infeas}


def _box_excess(Z, lo, hi, skip=()):
    if Z.size == 0:
        return 0.0
    e = np.maximum(lo - Z, Z - hi)
    if skip:
        e[..., list(skip)] = 0.0
    return max(0.0, float(np.max(e)))


def dynamics_defect(game: GameSpec, player: int, Z: Trajectory) -> float:
    d = game.defects(player, Z.flatten())
    return float(np.max(np.abs(d), initial=0.0))


def squared_clearance(game: RacingGame, Z1: Trajectory, Z2: Trajectory) -> np.ndarray:
    """``|p1_k - p2_k|^2 - d_safe^2`` for ``k = 0..N``."""
    return -game.ineq(1, Z1.flatten(), Z2.flatten())


def infeasibility_components(game: GameSpec, Z1: Trajectory, Z2: Trajectory, eps: float = 0.0,
                             include_player2: bool = True) -> Infeasibility:
    """Ex-post ``(e_dyn, e_col, e_bnd)``; ``eps > 0`` reports excess beyond ``eps``."""
    players = ((1, Z1), (2, Z2)) if include_player2 else ((1, Z1),)
    e_dyn = max(dynamics_defect(game, pl, Z) for pl, Z in players)
    g = game.ineq(1, Z1.flatten(), Z2.flatten())
    e_col = max(0.0, float(np.max(g, initial=0.0)))
    e_bnd = 0.0
    for pl, Z in players:
        xl, xu = game.state_bounds(pl)
        ul, uu = game.input_bounds(pl)
        skip = tuple(game.angle_dims[pl - 1])
        e_bnd = max(e_bnd, _box_excess(Z.X, xl, xu, skip), _box_excess(Z.U, ul, uu))
    out = Infeasibility(e_dyn, e_col, e_bnd)
    return out.excess(eps) if eps > 0 else out


def min_collision_margin(Z1: Trajectory, Z2: Trajectory, track, d_safe: float) -> float:
    """``min_k (|p1_k - p2_k| - d_safe)``; negative means an ex-post violation."""
    if Z1.X.shape[0] != Z2.X.shape[0]:
        raise ContractError("position sequences must have equal length")
    x1, y1 = frenet_to_cartesian(Z1.X[:, 2], Z1.X[:, 3], track)
    x2, y2 = frenet_to_cartesian(Z2.X[:, 2], Z2.X[:, 3], track)
    return float(np.min(np.hypot(np.asarray(x1) - x2, np.asarray(y1) - y2)) - d_safe)


# ----------------------------------------------------------------------------
# trials
# ----------------------------------------------------------------------------

@dataclass
class TrialSpec:
    trial_id: int
    seed: int
    x1_0: np.ndarray
    x2_0: np.ndarray
    method: str
    opts: Optional[SolverOptions] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.x1_0 = np.asarray(self.x1_0, float)
        self.x2_0 = np.asarray(self.x2_0, float)


@dataclass
class TrialResult:
    trial_id: int
    seed: int
    method: str
    status: str
    wall_time: float
    iterations: int
    e_dyn: float
    e_col: float
    e_bnd: float
    s_infeas: float
    min_margin: float
    m_col: float
    J1: float
    J2: float
    br_residual: Optional[float] = None
    x1_0: list = field(default_factory=list)
    x2_0: list = field(default_factory=list)
    error: Optional[str] = None
    Z1: Optional[dict] = None
    Z2: Optional[dict] = None

    @property
    def success(self) -> bool:
        return self.status == Status.SUCCEEDED.value

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.Z1 is None:
            d.pop("Z1")
            d.pop("Z2")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(**d)

    def comparable(self) -> dict:
        """Everything except wall time (for determinism checks)."""
        d = self.to_dict()
        d.pop("wall_time")
        return d


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _make_br(br, game):
    if isinstance(br, BestResponseOperator):
        return br
    if isinstance(br, SurrogateParams):
        return LearnedBestResponse(br)
    if br == "exact":
        return ExactBestResponse(game)
    raise ConfigError("method 'reduced' requires a best-response operator or surrogate parameters")


def run_trial(spec: TrialSpec, game: GameSpec | None = None, br=None, params: RacingParams | None = None,
              keep_trajectories: bool = False) -> TrialResult:
    """Run one method on one initial condition; timing covers the solve call only.

    ``br`` is a :class:`BestResponseOperator`, :class:`SurrogateParams`, or
    ``"exact"``; it is required for ``method="reduced"``.
    """
    if spec.method == "reduced" and br is None:
        raise ConfigError("method 'reduced' requires a best-response surrogate")
    if game is None:
        game = RacingGame(spec.x1_0, spec.x2_0, params)
    opts = spec.opts or SolverOptions()
    error = None
    br_op = _make_br(br, game) if spec.method == "reduced" else None
    init = initial_guess(game)
    t0 = time.perf_counter()
    try:
        if spec.method == "reduced":
            Z2_init = br_op.evaluate(init[0].X, game.x0[1])
            res = solve_reduced(game, br_op, (init[0], Z2_init), opts)
        elif spec.method == "ibr":
            res = solve_ibr(game, init, tol=opts.tol, opts=opts)
        else:
            res = solve_joint_kkt(game, init, opts)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        res = None
        error = f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    if res is None:
        Z1, Z2 = init
        status, iters, J1, J2, r_br = Status.NUMERICAL_FAILURE.value, 0, math.nan, math.nan, None
    else:
        Z1, Z2 = res.Z1, res.Z2
        status, iters, J1, J2 = res.status.value, res.iterations, res.J1, res.J2
        r_br = res.br_residual_norm
    inf = infeasibility_components(game, Z1, Z2)
    sq = squared_clearance(game, Z1, Z2) if hasattr(game, "track") else np.array([math.nan])
    margin = (min_collision_margin(Z1, Z2, game.track, game.params.bounds.d_safe)
              if hasattr(game, "track") else math.nan)
    return TrialResult(
        trial_id=spec.trial_id, seed=spec.seed, method=spec.method, status=status, wall_time=wall,
        iterations=int(iters), e_dyn=inf.e_dyn, e_col=inf.e_col, e_bnd=inf.e_bnd, s_infeas=inf.s_infeas,
        min_margin=margin, m_col=float(np.min(sq)), J1=_finite(J1), J2=_finite(J2),
        br_residual=_finite(r_br), x1_0=spec.x1_0.tolist(), x2_0=spec.x2_0.tolist(), error=error,
        Z1=Z1.to_dict() if keep_trajectories else None, Z2=Z2.to_dict() if keep_trajectories else None,
    )


@dataclass
class MonteCarloConfig:
    n_trials: int = 100
    methods: tuple = METHODS
    master_seed: int = 0
    workers: int = 1
    time_limit: float = 60.0
    tol: float = 1e-6
    psi_range: float = 0.5
    keep_trajectories: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {METHODS}")


def trial_specs(cfg: MonteCarloConfig, params: RacingParams | None = None) -> list:
    """Paired specs: every method sees the same initial pair for a trial id."""
    opts = SolverOptions(tol=cfg.tol, time_limit=cfg.time_limit)
    specs = []
    for i in range(cfg.n_trials):
        seed = derive_seed(cfg.master_seed, i)
        x1, x2 = sample_initial_conditions(seed, params, cfg.psi_range)
        specs.extend(TrialSpec(i, seed, x1, x2, m, opts) for m in cfg.methods)
    return specs


# set in each worker process before trials run
_WORKER_STATE = {}


def _init_worker(params, surrogate, keep):
    _WORKER_STATE.update(params=params, surrogate=surrogate, keep=keep)


def _run_one(spec: TrialSpec) -> TrialResult:
    st = _WORKER_STATE
    try:
        return run_trial(spec, br=st["surrogate"], params=st["params"], keep_trajectories=st["keep"])
    except Exception as exc:  # noqa: BLE001 - a failing trial must not abort the campaign
        nan = math.nan
        return TrialResult(spec.trial_id, spec.seed, spec.method, Status.NUMERICAL_FAILURE.value, 0.0, 0,
                           nan, nan, nan, nan, nan, nan, None, None, None,
                           spec.x1_0.tolist(), spec.x2_0.tolist(), f"{type(exc).__name__}: {exc}")


def run_monte_carlo(cfg: MonteCarloConfig, params: RacingParams | None = None, surrogate=None,
                    sink=None) -> list:
    """Run all paired trials; results sorted by ``(trial_id, method order)``.

    ``surrogate`` feeds the reduced method.  ``sink`` (optional callable)
    receives each result as it completes.
    """
    if "reduced" in cfg.methods and surrogate is None:
        raise ConfigError("method 'reduced' requires a best-response surrogate")
    specs = trial_specs(cfg, params)
    init_args = (params, surrogate, cfg.keep_trajectories)
    results = []
    if cfg.workers == 1:
        _init_worker(*init_args)
        for s in specs:
            r = _run_one(s)
            results.append(r)
            if sink:
                sink(r)
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(cfg.workers, initializer=_init_worker, initargs=init_args) as pool:
            for r in pool.imap_unordered(_run_one, specs):
                results.append(r)
                if sink:
                    sink(r)
    order = {m: i for i, m in enumerate(METHODS)}
    results.sort(key=lambda r: (r.trial_id, order[r.method]))
    return results


# ----------------------------------------------------------------------------
# summaries
# ----------------------------------------------------------------------------

def percentile(values, q: float) -> Optional[float]:
    """Linear interpolation between order statistics at position ``q/100 (n-1)``."""
    x = np.sort(np.asarray(values, float))
    if x.size == 0:
        return None
    pos = q / 100.0 * (x.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (pos - lo) * (x[hi] - x[lo]))


@dataclass
class MethodSummary:
    method: str
    n_trials: int
    success_pct: float
    median_time: Optional[float]
    p95_time: Optional[float]
    median_iterations: Optional[float]
    p95_iterations: Optional[float]
    coll_viol_pct_success: Optional[float]
    coll_viol_pct_all: float
    status_counts: dict
    dJ1_n: int = 0
    dJ1_median: Optional[float] = None
    dJ1_p95_abs: Optional[float] = None
    dJ1_mean: Optional[float] = None
    median_abs_J1: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def paired_dJ1(results, method: str, baseline: str) -> list:
    """``J1(method) - J1(baseline)`` on trial ids where both succeeded."""
    by = {}
    for r in results:
        by.setdefault(r.trial_id, {})[r.method] = r
    out = []
    for tid in sorted(by):
        a, b = by[tid].get(method), by[tid].get(baseline)
        if a and b and a.success and b.success and a.J1 is not None and b.J1 is not None:
            out.append(a.J1 - b.J1)
    return out


def summarize(results, baseline: str = "ibr") -> dict:
    """Per-method :class:`MethodSummary`, keyed by method name."""
    results = list(results)
    if not results:
        raise ContractError("no results to summarize")
    methods = [m for m in METHODS if any(r.method == m for r in results)]
    out = {}
    for m in methods:
        rs = [r for r in results if r.method == m]
        ok = [r for r in rs if r.success]
        counts = {}
        for r in rs:
            counts[r.status] = counts.get(r.status, 0) + 1
        viol = [r for r in rs if r.min_margin is not None and r.min_margin < 0]
        s = MethodSummary(
            method=m, n_trials=len(rs), success_pct=100.0 * len(ok) / len(rs),
            median_time=percentile([r.wall_time for r in ok], 50),
            p95_time=percentile([r.wall_time for r in ok], 95),
            median_iterations=percentile([r.iterations for r in ok], 50),
            p95_iterations=percentile([r.iterations for r in ok], 95),
            coll_viol_pct_success=(100.0 * sum(r.min_margin < 0 for r in ok) / len(ok)) if ok else None,
            coll_viol_pct_all=100.0 * len(viol) / len(rs),
            status_counts=dict(sorted(counts.items())),
        )
        if any(r.method == baseline for r in results):
            d = paired_dJ1(results, m, baseline)
            if d:
                s.dJ1_n = len(d)
                s.dJ1_median = percentile(d, 50)
                s.dJ1_p95_abs = percentile(np.abs(d), 95)
                s.dJ1_mean = float(np.mean(d))
                s.median_abs_J1 = percentile([abs(r.J1) for r in ok if r.J1 is not None], 50)
        out[m] = s
    return out


def dominant_failure(summary: MethodSummary) -> Optional[str]:
    """Most frequent non-success status (ties broken by name), or ``None``."""
    fails = {k: v for k, v in summary.status_counts.items() if k != Status.SUCCEEDED.value}
    if not fails:
        return None
    return sorted(fails.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


SUMMARY_COLUMNS = ["method", "n_trials", "success_pct", "median_time", "p95_time", "median_iterations",
                   "p95_iterations", "coll_viol_pct_success", "coll_viol_pct_all", "dJ1_n", "dJ1_median",
                   "dJ1_p95_abs", "status_counts"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, dict):
        return ";".join(f"{k}={n}" for k, n in v.items())
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(summary: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summary.values():
            d = s.to_dict()
            w.writerow([_fmt(d[c]) for c in SUMMARY_COLUMNS])
        fh.write("# percentiles: linear interpolation between order statistics\n")


def write_results_jsonl(results, path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_results_jsonl(path) -> list:
    with open(path) as fh:
        return [TrialResult.from_dict(json.loads(line)) for line in fh if line.strip()]


# ----------------------------------------------------------------------------
# plot data
# ----------------------------------------------------------------------------

def ecdf(values):
    x = np.sort(np.asarray([v for v in values if v is not None and math.isfinite(v)], float))
    return x, np.arange(1, x.size + 1) / max(x.size, 1)


def histogram(values, bins: int = 30):
    x = np.asarray([v for v in values if v is not None and math.isfinite(v)], float)
    if x.size == 0:
        return np.zeros(0), np.zeros(bins + 1)
    return np.histogram(x, bins=bins)


def write_report(results, out_dir, baseline: str = "ibr", bins: int = 30) -> list:
    """Histogram and ECDF CSVs for margin, time, iterations and paired dJ1.

    Returns the written paths.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []
    methods = [m for m in METHODS if any(r.method == m for r in results)]
    series = {}
    for m in methods:
        rs = [r for r in results if r.method == m]
        ok = [r for r in rs if r.success]
        series[f"margin_{m}"] = [r.min_margin for r in rs]
        series[f"time_{m}"] = [r.wall_time for r in ok]
        series[f"iterations_{m}"] = [float(r.iterations) for r in ok]
        series[f"infeas_excess_{m}"] = [max(0.0, r.s_infeas - 1e-6) for r in rs
                                        if r.s_infeas is not None and math.isfinite(r.s_infeas)]
        if m != baseline:
            series[f"dJ1_{m}_vs_{baseline}"] = paired_dJ1(results, m, baseline)
    for name, vals in series.items():
        x, F = ecdf(vals)
        path = os.path.join(out_dir, f"ecdf_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "ecdf"])
            w.writerows(zip(map(repr, x.tolist()), map(repr, F.tolist())))
        written.append(path)
        counts, edges = histogram(vals, bins)
        path = os.path.join(out_dir, f"hist_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for i in range(len(counts)):
                w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])])
        written.append(path)
    summary = summarize(results, baseline)
    path = os.path.join(out_dir, "summary.csv")
    write_summary_csv(summary, path)
    written.append(path)
    return written
