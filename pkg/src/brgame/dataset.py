"""Best-response training data: samples, batched arrays, generation and JSONL I/O.

Each sample pairs a Player-1 plan ``X1`` with Player 2's exact best response
``(X2, U2)`` from an offline OCP solve.  Generation draws the initial pair with
the Monte Carlo sampler and synthesizes the plan in one of two ways (chosen
with equal probability per sample):

* ``"br"``: Player 1's exact best response to Player 2 driving with zero
  input (falls back to ``"random"`` when that solve fails);
* ``"random"``: uniformly random bounded inputs rolled out from ``x1_0``.

Per-sample seeds are derived from the master seed, so the output does not
depend on the number of worker processes.
"""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from brgame.equilibrium import BestResponseError, exact_br
from brgame.errors import ContractError, SamplingError
from brgame.game import Trajectory, rollout
from brgame.nlp import SolverOptions
from brgame.racing import RacingGame, RacingParams
from brgame.seeding import derive_seed

log = logging.getLogger(__name__)

LABEL_OPTS = SolverOptions(tol=1e-8, max_outer=60, max_inner=200, rho_max=1e6)


@dataclass(frozen=True)
class BRSample:
    x1_0: np.ndarray
    x2_0: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    U2: np.ndarray
    plan: str = "random"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "plan": self.plan,
            "x1_0": self.x1_0.tolist(),
            "x2_0": self.x2_0.tolist(),
            "X1": self.X1.tolist(),
            "X2": self.X2.tolist(),
            "U2": self.U2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BRSample":
        return cls(np.asarray(d["x1_0"], float), np.asarray(d["x2_0"], float),
                   np.asarray(d["X1"], float), np.asarray(d["X2"], float),
                   np.asarray(d["U2"], float), d.get("plan", "random"), int(d.get("seed", 0)))


@dataclass
class BRArrays:
    """Stacked samples: ``x2_0 (M,4)``, ``X1 (M,N+1,4)``, ``X2 (M,N+1,4)``, ``U2 (M,N,2)``."""

    x2_0: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    U2: np.ndarray
    x1_0: np.ndarray = field(default=None)

    def __post_init__(self):
        M = self.x2_0.shape[0]
        if M == 0:
            raise ContractError("empty dataset")
        N = self.U2.shape[1]
        shapes = {"X1": (M, N + 1, 4), "X2": (M, N + 1, 4), "U2": (M, N, 2), "x2_0": (M, 4)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ContractError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.x1_0 is None:
            self.x1_0 = self.X1[:, 0].copy()

    def __len__(self) -> int:
        return self.x2_0.shape[0]

    @property
    def N(self) -> int:
        return self.U2.shape[1]

    def subset(self, idx) -> "BRArrays":
        return BRArrays(self.x2_0[idx], self.X1[idx], self.X2[idx], self.U2[idx], self.x1_0[idx])

    @classmethod
    def from_samples(cls, samples) -> "BRArrays":
        samples = list(samples)
        if not samples:
            raise ContractError("empty dataset")
        return cls(np.stack([s.x2_0 for s in samples]), np.stack([s.X1 for s in samples]),
                   np.stack([s.X2 for s in samples]), np.stack([s.U2 for s in samples]),
                   np.stack([s.x1_0 for s in samples]))


def _random_plan(game: RacingGame, rng) -> np.ndarray:
    b = game.params.bounds
    U = rng.uniform(b.u_lower, b.u_upper, size=(game.N, 2))
    return rollout(game, 1, game.x0[0], U)


def _br_plan(game: RacingGame):
    lay = game.layout(2)
    Z2 = Trajectory(rollout(game, 2, game.x0[1], np.zeros((lay.N, lay.m))), np.zeros((lay.N, lay.m)))
    try:
        return exact_br(game, 1, Z2, opts=LABEL_OPTS).X
    except BestResponseError:
        return None


def make_sample(seed: int, params: RacingParams | None = None):
    """Draw and label one sample; returns ``(BRSample or None, plan kind)``."""
    from brgame.harness import sample_initial_conditions

    rng = np.random.default_rng(seed)
    try:
        x1_0, x2_0 = sample_initial_conditions(int(rng.integers(2**63)), params)
    except SamplingError:
        return None, "sampling"
    game = RacingGame(x1_0, x2_0, params)
    kind = "br" if rng.random() < 0.5 else "random"
    X1 = _br_plan(game) if kind == "br" else None
    if X1 is None:
        kind = "random" if kind == "random" else "br-fallback"
        X1 = _random_plan(game, rng)
    lay1 = game.layout(1)
    Z1 = Trajectory(X1, np.zeros((lay1.N, lay1.m)))
    try:
        Z2 = exact_br(game, 2, Z1, opts=LABEL_OPTS)
    except BestResponseError:
        return None, kind
    return BRSample(np.asarray(x1_0, float), np.asarray(x2_0, float), np.asarray(X1),
                    np.asarray(Z2.X), np.asarray(Z2.U), kind, seed), kind


def _work(args):
    seed, params = args
    return make_sample(seed, params)


@dataclass
class GenerationReport:
    requested: int
    attempted: int
    discarded: int
    plan_counts: dict

    @property
    def discard_rate(self) -> float:
        return self.discarded / self.attempted if self.attempted else 0.0

    def to_dict(self) -> dict:
        return {"requested": self.requested, "attempted": self.attempted, "discarded": self.discarded,
                "discard_rate": self.discard_rate, "plan_counts": dict(sorted(self.plan_counts.items()))}


def generate_dataset(n_samples: int, seed: int, params: RacingParams | None = None,
                     workers: int = 1, max_attempts: int | None = None):
    """Generate ``n_samples`` labeled samples; returns ``(samples, GenerationReport)``.

    Attempts use seeds ``derive_seed(seed, j)`` for ``j = 0, 1, ...`` and the
    first ``n_samples`` successes in index order are kept.
    """
    if n_samples < 1:
        raise ContractError("n_samples must be at least 1")
    max_attempts = max_attempts or 4 * n_samples + 16
    samples, counts = [], {}
    attempted = discarded = 0
    pool = mp.get_context("fork").Pool(workers) if workers > 1 else None
    try:
        while len(samples) < n_samples and attempted < max_attempts:
            chunk = min(max(n_samples - len(samples), workers), max_attempts - attempted)
            jobs = [(derive_seed(seed, attempted + j), params) for j in range(chunk)]
            results = pool.map(_work, jobs) if pool else [_work(j) for j in jobs]
            # count only up to the last kept attempt so the report is independent of workers
            for sample, kind in results:
                if len(samples) == n_samples:
                    break
                attempted += 1
                counts[kind] = counts.get(kind, 0) + 1
                if sample is None:
                    discarded += 1
                else:
                    samples.append(sample)
    finally:
        if pool:
            pool.close()
            pool.join()
    report = GenerationReport(n_samples, attempted, discarded, counts)
    log.info("generated %d samples, discard rate %.3f", len(samples), report.discard_rate)
    return samples, report


def write_jsonl(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), separators=(",", ":")) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [BRSample.from_dict(json.loads(line)) for line in fh if line.strip()]
