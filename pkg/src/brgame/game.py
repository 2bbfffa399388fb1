"""Two-player finite-horizon dynamic games.

A game is described by a :class:`GameSpec` subclass that provides per-player
discrete dynamics, stage/terminal costs (as whole-trajectory functions),
coupling inequalities ``g_i <= 0``, optional equalities ``h_i = 0`` and box
bounds, each with first and second derivatives.  Players are indexed 1 and 2.

Flat trajectory layout (per player): ``[x_0, ..., x_N, u_0, ..., u_{N-1}]``,
each vector row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from brgame.errors import ContractError


@dataclass(frozen=True)
class TrajectoryLayout:
    N: int
    n: int
    m: int

    @property
    def size(self) -> int:
        return self.n * (self.N + 1) + self.m * self.N

    @property
    def x_slice(self) -> slice:
        return slice(0, self.n * (self.N + 1))

    @property
    def u_slice(self) -> slice:
        return slice(self.n * (self.N + 1), self.size)

    def x_index(self, k: int, j: int) -> int:
        return k * self.n + j

    def u_index(self, k: int, j: int) -> int:
        return self.n * (self.N + 1) + k * self.m + j


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``X`` with shape ``(N+1, n)`` and inputs ``U`` with shape ``(N, m)``."""

    X: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        U = np.array(self.U, dtype=float)
        if U.size == 0:
            U = np.zeros((X.shape[0] - 1, 0 if U.ndim < 2 else U.shape[-1]))
        elif U.ndim == 1:
            U = U.reshape(X.shape[0] - 1, -1)
        if X.ndim != 2 or U.ndim != 2 or U.shape[0] != X.shape[0] - 1:
            raise ContractError("trajectory needs N+1 states and N inputs")
        X.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)

    @property
    def N(self) -> int:
        return self.U.shape[0]

    @property
    def layout(self) -> TrajectoryLayout:
        return TrajectoryLayout(self.N, self.X.shape[1], self.U.shape[1])

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.X.ravel(), self.U.ravel()])

    @classmethod
    def from_flat(cls, z, N: int, n: int, m: int) -> "Trajectory":
        z = np.asarray(z, dtype=float)
        lay = TrajectoryLayout(N, n, m)
        if z.shape != (lay.size,):
            raise ContractError(f"flat trajectory has size {z.size}, expected {lay.size}")
        return cls(z[lay.x_slice].reshape(N + 1, n), z[lay.u_slice].reshape(N, m))

    def to_dict(self) -> dict:
        return {"X": self.X.tolist(), "U": self.U.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        X = np.asarray(d["X"], dtype=float)
        U = np.asarray(d["U"], dtype=float)
        if U.size == 0:
            U = np.zeros((X.shape[0] - 1, 0))
        return cls(X, U)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Trajectory":
        return cls.from_dict(json.loads(s))

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.X.shape == other.X.shape and self.U.shape == other.U.shape
                and np.array_equal(self.X, other.X) and np.array_equal(self.U, other.U))

    __hash__ = None


@dataclass
class Multipliers:
    lam_eq: np.ndarray
    mu_ineq: np.ndarray

    def to_dict(self) -> dict:
        return {"lam_eq": np.asarray(self.lam_eq).tolist(),
                "mu_ineq": np.asarray(self.mu_ineq).tolist()}


class QuadraticCost:
    """``J(z) = 0.5 z^T Q z + c^T z + const`` over the stacked ``[Z1, Z2]``."""

    def __init__(self, Q, c, const: float = 0.0):
        self.Q = np.asarray(Q, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.const = float(const)
        self.Q.setflags(write=False)
        self.c.setflags(write=False)

    def value(self, z) -> float:
        return float(0.5 * z @ (self.Q @ z) + self.c @ z + self.const)

    def gradient(self, z) -> np.ndarray:
        return self.Q @ z + self.c

    def hessian(self, z=None) -> np.ndarray:
        return self.Q.copy()


def other(player: int) -> int:
    if player not in (1, 2):
        raise ContractError("player index must be 1 or 2")
    return 3 - player


class GameSpec:
    """Base class for two-player games.

    Subclasses set ``N``, ``dt``, ``state_dims``, ``input_dims``, ``x0`` and
    implement the dynamics, cost and constraint hooks below.  Cost and
    constraint hooks take ``(Z1, Z2)`` as flat arrays in player order, and
    return derivatives with respect to the concatenation ``[Z1, Z2]``.
    """

    N: int
    dt: float
    state_dims: tuple
    input_dims: tuple
    x0: tuple
    # state coordinates that are angles; their box bounds are the wrap domain
    angle_dims: tuple = ((), ())

    def with_initial_states(self, x1_0, x2_0) -> "GameSpec":
        """Copy of the game with new initial states."""
        raise NotImplementedError

    # --- layout helpers ------------------------------------------------------
    def layout(self, player: int) -> TrajectoryLayout:
        other(player)
        return TrajectoryLayout(self.N, self.state_dims[player - 1], self.input_dims[player - 1])

    def size(self, player: int) -> int:
        return self.layout(player).size

    def split(self, z12):
        d1 = self.size(1)
        return z12[:d1], z12[d1:]

    def trajectory(self, player: int, z) -> Trajectory:
        lay = self.layout(player)
        return Trajectory.from_flat(z, lay.N, lay.n, lay.m)

    def check(self, player: int, Z: Trajectory):
        lay = self.layout(player)
        if Z.X.shape != (lay.N + 1, lay.n) or Z.U.shape != (lay.N, lay.m):
            raise ContractError(
                f"player {player} trajectory has shapes {Z.X.shape}/{Z.U.shape}, "
                f"expected {(lay.N + 1, lay.n)}/{(lay.N, lay.m)}")

    # --- dynamics ------------------------------------------------------------
    def step(self, player: int, X, U):
        raise NotImplementedError

    def step_jac(self, player: int, X, U):
        raise NotImplementedError

    def step_curvature(self, player: int, X, U, W):
        raise NotImplementedError

    # --- costs ---------------------------------------------------------------
    def cost(self, player: int, z1, z2) -> float:
        raise NotImplementedError

    def cost_grad(self, player: int, z1, z2):
        raise NotImplementedError

    def cost_hess(self, player: int, z1, z2):
        raise NotImplementedError

    # --- coupling inequalities g_i <= 0 ------------------------------------------
    def n_ineq(self, player: int) -> int:
        return 0

    def ineq(self, player: int, z1, z2):
        return np.zeros(0)

    def ineq_jac(self, player: int, z1, z2):
        return np.zeros((0, self.size(1) + self.size(2)))

    def ineq_curvature(self, player: int, z1, z2, w):
        d = self.size(1) + self.size(2)
        return np.zeros((d, d))

    # --- extra equalities h_i = 0 -----------------------------------------------
    def n_eq(self, player: int) -> int:
        return 0

    def eq(self, player: int, z1, z2):
        return np.zeros(0)

    def eq_jac(self, player: int, z1, z2):
        return np.zeros((0, self.size(1) + self.size(2)))

    def eq_curvature(self, player: int, z1, z2, w):
        d = self.size(1) + self.size(2)
        return np.zeros((d, d))

    # --- bounds -------------------------------------------------------------
    def state_bounds(self, player: int):
        n = self.state_dims[player - 1]
        return np.full(n, -np.inf), np.full(n, np.inf)

    def input_bounds(self, player: int):
        m = self.input_dims[player - 1]
        return np.full(m, -np.inf), np.full(m, np.inf)

    def decision_bounds(self, player: int):
        """Flat bounds with ``x_0`` pinned and angle coordinates left free."""
        lay = self.layout(player)
        xl, xu = self.state_bounds(player)
        xl, xu = xl.copy(), xu.copy()
        for j in self.angle_dims[player - 1]:
            xl[j], xu[j] = -np.inf, np.inf
        ul, uu = self.input_bounds(player)
        lo = np.concatenate([np.tile(xl, lay.N + 1), np.tile(ul, lay.N)])
        hi = np.concatenate([np.tile(xu, lay.N + 1), np.tile(uu, lay.N)])
        x0 = np.asarray(self.x0[player - 1], float)
        lo[:lay.n] = x0
        hi[:lay.n] = x0
        return lo, hi

    # --- dynamics as equality constraints -----------------------------------
    def defects(self, player: int, z) -> np.ndarray:
        """Stacked ``x_{k+1} - f(x_k, u_k)`` for ``k = 0..N-1`` (k-major)."""
        lay = self.layout(player)
        X = z[lay.x_slice].reshape(lay.N + 1, lay.n)
        U = z[lay.u_slice].reshape(lay.N, lay.m)
        if lay.N == 0:
            return np.zeros(0)
        # plain differences: wrapping them would make every 2*pi shift of an
        # angle coordinate feasible and the solution set non-isolated
        return (X[1:] - self.step(player, X[:-1], U)).ravel()

    def defects_jac(self, player: int, z) -> np.ndarray:
        lay = self.layout(player)
        N, n, m = lay.N, lay.n, lay.m
        J = np.zeros((N * n, lay.size))
        if N == 0:
            return J
        X = z[lay.x_slice].reshape(N + 1, n)
        U = z[lay.u_slice].reshape(N, m)
        _, A, B = self.step_jac(player, X[:-1], U)
        eye = np.eye(n)
        xs = n * (N + 1)
        for k in range(N):
            r = slice(k * n, (k + 1) * n)
            J[r, k * n:(k + 1) * n] = -A[k]
            J[r, (k + 1) * n:(k + 2) * n] = eye
            J[r, xs + k * m: xs + (k + 1) * m] = -B[k]
        return J

    def defects_curvature(self, player: int, z, w) -> np.ndarray:
        """Hessian of ``w . defects(z)`` in the player's flat coordinates."""
        lay = self.layout(player)
        N, n, m = lay.N, lay.n, lay.m
        H = np.zeros((lay.size, lay.size))
        if N == 0:
            return H
        X = z[lay.x_slice].reshape(N + 1, n)
        U = z[lay.u_slice].reshape(N, m)
        W = -np.asarray(w, float).reshape(N, n)
        Hk = self.step_curvature(player, X[:-1], U, W)
        xs = n * (N + 1)
        for k in range(N):
            idx = np.r_[k * n:(k + 1) * n, xs + k * m: xs + (k + 1) * m]
            H[np.ix_(idx, idx)] += Hk[k]
        return H

    def rollout(self, player: int, x0, U) -> np.ndarray:
        lay = self.layout(player)
        U = np.asarray(U, dtype=float).reshape(-1, lay.m)
        X = np.empty((U.shape[0] + 1, lay.n))
        X[0] = x0
        for k in range(U.shape[0]):
            X[k + 1] = self.step(player, X[k:k + 1], U[k:k + 1])[0]
        return X


def _flat_pair(game: GameSpec, player: int, Z_self: Trajectory, Z_other: Trajectory):
    game.check(player, Z_self)
    game.check(other(player), Z_other)
    if player == 1:
        return Z_self.flatten(), Z_other.flatten()
    return Z_other.flatten(), Z_self.flatten()


def evaluate_cost(game: GameSpec, player: int, Z_self: Trajectory, Z_other: Trajectory) -> float:
    """Total cost ``J_i`` (stage sum plus terminal) of ``player``."""
    z1, z2 = _flat_pair(game, player, Z_self, Z_other)
    return float(game.cost(player, z1, z2))


def evaluate_constraints(game: GameSpec, player: int, Z_self: Trajectory, Z_other: Trajectory):
    """Return ``(eq_values, ineq_values)`` for ``player``.

    ``eq_values`` stacks the dynamics defects ``x_{k+1} - f(x_k, u_k)``
    (k-major) followed by ``h_i``.  ``ineq_values`` stacks ``g_i`` with the
    ``g <= 0`` feasibility convention.  Box bounds are not included.
    """
    z1, z2 = _flat_pair(game, player, Z_self, Z_other)
    z_self = z1 if player == 1 else z2
    eq = np.concatenate([game.defects(player, z_self), game.eq(player, z1, z2)])
    return eq, np.asarray(game.ineq(player, z1, z2), float)


def rollout(game: GameSpec, player: int, x0, U) -> np.ndarray:
    """State sequence ``X_0 = x0, X_{k+1} = f_i(X_k, U_k)`` of length ``len(U) + 1``."""
    lay = game.layout(player)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (lay.n,):
        raise ContractError("initial state has wrong dimension")
    U = np.asarray(U, dtype=float)
    if U.size == 0:
        return x0[None, :].copy()
    return game.rollout(player, x0, U.reshape(-1, lay.m))


def bound_violation(game: GameSpec, player: int, Z: Trajectory) -> float:
    """Largest box-bound violation of a trajectory (0 when inside)."""
    xl, xu = game.state_bounds(player)
    ul, uu = game.input_bounds(player)
    v = 0.0
    if Z.X.size:
        v = max(v, float(np.max(np.maximum(xl - Z.X, Z.X - xu))))
    if Z.U.size:
        v = max(v, float(np.max(np.maximum(ul - Z.U, Z.U - uu))))
    return max(v, 0.0)


@dataclass
class NashReport:
    max_J1_improvement: float
    max_J2_improvement: float
    n_feasible_probes: tuple
    candidate_feasible: bool

    def to_dict(self) -> dict:
        return {
            "max_J1_improvement": self.max_J1_improvement,
            "max_J2_improvement": self.max_J2_improvement,
            "n_feasible_probes": list(self.n_feasible_probes),
            "candidate_feasible": self.candidate_feasible,
        }


def _ball(rng, n_samples, dim, radius):
    d = rng.standard_normal((n_samples, dim))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = radius * rng.random((n_samples, 1)) ** (1.0 / dim)
    return d / norms * r


def nash_check(game: GameSpec, Z1: Trajectory, Z2: Trajectory, radius: float,
               n_samples: int, seed: int, feas_tol: float = 1e-6) -> NashReport:
    """Probe unilateral deviations for a cost decrease.

    For each player, input sequences are perturbed uniformly within a ball
    of ``radius`` (states recomputed by rollout so probes are dynamically
    feasible).  Probes violating bounds or the player's constraints by more
    than ``feas_tol`` are discarded.  Reports the largest cost decrease found
    (clamped at zero) relative to the rolled-out candidate.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    game.check(1, Z1)
    game.check(2, Z2)
    rng = np.random.default_rng(seed)
    feasible_candidate = True
    improvements = []
    counts = []
    for player, Zs, Zo in ((1, Z1, Z2), (2, Z2, Z1)):
        eq, ineq = evaluate_constraints(game, player, Zs, Zo)
        if (np.max(np.abs(eq), initial=0.0) > feas_tol
                or np.max(ineq, initial=-np.inf) > feas_tol
                or bound_violation(game, player, Zs) > feas_tol):
            feasible_candidate = False
        x0 = np.asarray(game.x0[player - 1], float)
        base_X = rollout(game, player, x0, Zs.U)
        base = evaluate_cost(game, player, Trajectory(base_X, Zs.U), Zo)
        dim = Zs.U.size
        best = 0.0
        n_ok = 0
        if dim and radius > 0 and n_samples > 0:
            deltas = _ball(rng, n_samples, dim, radius)
        else:
            deltas = np.zeros((n_samples, dim))
        for delta in deltas:
            U = Zs.U + delta.reshape(Zs.U.shape)
            X = rollout(game, player, x0, U)
            probe = Trajectory(X, U)
            _, g = evaluate_constraints(game, player, probe, Zo)
            h = np.zeros(0)
            if game.n_eq(player):
                h = evaluate_constraints(game, player, probe, Zo)[0][game.N * game.state_dims[player - 1]:]
            if (np.max(g, initial=-np.inf) > feas_tol or np.max(np.abs(h), initial=0.0) > feas_tol
                    or bound_violation(game, player, probe) > feas_tol):
                continue
            n_ok += 1
            best = max(best, base - evaluate_cost(game, player, probe, Zo))
        improvements.append(best)
        counts.append(n_ok)
    return NashReport(improvements[0], improvements[1], tuple(counts), feasible_candidate)
