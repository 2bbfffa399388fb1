"""Equilibrium solvers: reduced best-response formulation, IBR and joint KKT.

All three pipelines are built on :func:`brgame.nlp.solve_nlp`.  The reduced
and joint formulations are *variational*: each constraint row enters the
stationarity conditions only through the variables of the player that owns
it, and the objective field is the stack of partial gradients.  In the
reduced problem the field is ``[grad_{Z1} J1, 0]``: the opponent block
``Z2`` is coupled to ``X1`` only through the equality ``Z2 - B2(X1) = 0``,
whose rows are owned by ``Z2``.  At a solution the multipliers of those rows
vanish and the ``Z1`` rows are exactly Player 1's first-order conditions with
``Z2`` frozen, i.e. Nash rather than Stackelberg stationarity.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from brgame.errors import ContractError
from brgame.game import GameSpec, Multipliers, Trajectory, evaluate_cost, rollout
from brgame.nlp import (
    EvaluationError,
    KKTResidual,
    NLPProblem,
    SolveOutcome,
    SolverOptions,
    Status,
    kkt_residual,
    kkt_sensitivity,
    newton_kkt,
    solve_nlp,
)


class BestResponseError(RuntimeError):
    """A best-response solve did not succeed; carries the solver outcome."""

    def __init__(self, message, outcome: SolveOutcome, last: Trajectory):
        super().__init__(message)
        self.outcome = outcome
        self.last = last


# ----------------------------------------------------------------------------
# single-player optimal control problems
# ----------------------------------------------------------------------------

def _stack(player, z_self, z_other):
    return (z_self, z_other) if player == 1 else (z_other, z_self)


def player_problem(game: GameSpec, player: int, z_other) -> NLPProblem:
    """Player ``player``'s OCP with the opponent's flat trajectory frozen."""
    z_other = np.asarray(z_other, float)
    d = game.size(player)
    own = slice(0, d) if player == 1 else slice(game.size(1), None)
    n_dyn = game.N * game.state_dims[player - 1]
    n_h = game.n_eq(player)
    n_g = game.n_ineq(player)

    def objective(z):
        return game.cost(player, *_stack(player, z, z_other))

    def gradient(z):
        return game.cost_grad(player, *_stack(player, z, z_other))[player - 1]

    def hessian(z):
        return game.cost_hess(player, *_stack(player, z, z_other))[own, own]

    def eq(z):
        return np.concatenate([game.defects(player, z), game.eq(player, *_stack(player, z, z_other))])

    def eq_jac(z):
        Jh = game.eq_jac(player, *_stack(player, z, z_other))[:, own]
        return np.vstack([game.defects_jac(player, z), Jh])

    def ineq(z):
        return game.ineq(player, *_stack(player, z, z_other))

    def ineq_jac(z):
        return game.ineq_jac(player, *_stack(player, z, z_other))[:, own]

    def curvature(z, y_eq, y_ineq):
        H = game.defects_curvature(player, z, y_eq[:n_dyn])
        pair = _stack(player, z, z_other)
        if n_h:
            H = H + game.eq_curvature(player, *pair, y_eq[n_dyn:])[own, own]
        if n_g and np.any(y_ineq):
            H = H + game.ineq_curvature(player, *pair, y_ineq)[own, own]
        return H

    lo, hi = game.decision_bounds(player)
    return NLPProblem(
        n=d, objective=objective, gradient=gradient, hessian=hessian,
        n_eq=n_dyn + n_h, eq=eq, eq_jac=eq_jac,
        n_ineq=n_g, ineq=ineq, ineq_jac=ineq_jac,
        lower=lo, upper=hi, curvature=curvature,
    )


def initial_guess(game: GameSpec):
    """Shared warm start: zero-input rollouts from both initial states."""
    out = []
    for player in (1, 2):
        U = np.zeros((game.N, game.input_dims[player - 1]))
        out.append(Trajectory(rollout(game, player, game.x0[player - 1], U), U))
    return tuple(out)


@dataclass
class BestResponseSolution:
    Z: Trajectory
    outcome: SolveOutcome


def solve_best_response(game: GameSpec, player: int, Z_other: Trajectory,
                        init: Optional[Trajectory] = None, opts: SolverOptions | None = None,
                        warm: Optional[SolveOutcome] = None) -> BestResponseSolution:
    """Solve one player's OCP; never raises on solver failure."""
    game.check(3 - player, Z_other)
    p = player_problem(game, player, Z_other.flatten())
    if init is None:
        init = initial_guess(game)[player - 1]
    game.check(player, init)
    kw = {}
    if warm is not None and warm.lam.shape == (p.n_eq,) and warm.mu.shape == (p.n_ineq,):
        kw = dict(lam0=warm.lam, mu0=warm.mu)
    out = solve_nlp(p, init.flatten(), opts, **kw)
    return BestResponseSolution(game.trajectory(player, out.x), out)


def exact_br(game: GameSpec, player: int, Z_other: Trajectory,
             init: Optional[Trajectory] = None, opts: SolverOptions | None = None) -> Trajectory:
    """Best response of ``player`` to ``Z_other``; raises :class:`BestResponseError` on failure."""
    sol = solve_best_response(game, player, Z_other, init, opts)
    if not sol.outcome.success:
        raise BestResponseError(f"best response of player {player} ended with "
                                f"{sol.outcome.status.value}", sol.outcome, sol.Z)
    return sol.Z


# ----------------------------------------------------------------------------
# best-response operators
# ----------------------------------------------------------------------------

class BestResponseOperator:
    """Maps Player 1's state sequence (and ``x2_0``) to a Player-2 trajectory."""

    provenance = "Abstract"
    # False after an evaluation whose output is not a valid best response
    valid = True

    def evaluate(self, X1, x2_0) -> Trajectory:
        raise NotImplementedError

    def jacobian(self, X1, x2_0) -> np.ndarray:
        """``d flat(Z2) / d vec(X1)``, shape ``(dim Z2, (N+1) n1)``."""
        raise NotImplementedError


class ExactBestResponse(BestResponseOperator):
    """Player 2's best response computed by solving its OCP.

    Successive calls are warm-started from the previous solution, and the
    Jacobian comes from differentiating the KKT conditions at the solution.
    Player 2's problem must depend on Player 1 only through ``X1``.
    """

    provenance = "Exact"

    def __init__(self, game: GameSpec, opts: SolverOptions | None = None):
        self.game = game
        # a lower penalty cap gives a faster infeasibility verdict for the nested solve
        self.opts = opts or SolverOptions(tol=1e-10, max_outer=60, max_inner=200, rho_max=1e6)
        self._cache_key = None
        self._cache = None
        self._warm: Optional[BestResponseSolution] = None
        self.failures = 0
        self.last_outcome: Optional[SolveOutcome] = None

    def _game_for(self, x2_0):
        g = self.game
        x2_0 = np.asarray(g.x0[1] if x2_0 is None else x2_0, float)
        if np.array_equal(x2_0, g.x0[1]):
            return g
        return g.with_initial_states(g.x0[0], x2_0)

    def _z1(self, game, X1):
        lay = game.layout(1)
        X1 = np.asarray(X1, float).reshape(lay.N + 1, lay.n)
        return Trajectory(X1, np.zeros((lay.N, lay.m)))

    def _solve(self, X1, x2_0):
        key = (np.asarray(X1, float).tobytes(), None if x2_0 is None else np.asarray(x2_0, float).tobytes())
        if key == self._cache_key:
            return self._cache
        game = self._game_for(x2_0)
        Z1 = self._z1(game, X1)
        init = None
        warm = None
        if self._warm is not None and np.array_equal(self._warm.Z.X[0], game.x0[1]):
            init, warm = self._warm.Z, self._warm.outcome
        sol = solve_best_response(game, 2, Z1, init, self.opts, warm)
        if not sol.outcome.success and init is not None:
            cold = solve_best_response(game, 2, Z1, None, self.opts)
            if cold.outcome.success:
                sol = cold
        self.last_outcome = sol.outcome
        if sol.outcome.success:
            self._warm = sol
        else:
            self.failures += 1
        self._cache_key = key
        self._cache = (game, Z1, sol)
        return self._cache

    def evaluate(self, X1, x2_0=None) -> Trajectory:
        return self._solve(X1, x2_0)[2].Z

    @property
    def valid(self) -> bool:
        return self._cache is None or self._cache[2].outcome.success

    def jacobian(self, X1, x2_0=None) -> np.ndarray:
        game, Z1, sol = self._solve(X1, x2_0)
        z1 = Z1.flatten()
        z2 = sol.Z.flatten()
        d1 = game.size(1)
        nx1 = game.layout(1).x_slice.stop
        p = player_problem(game, 2, z1)
        out = sol.outcome
        n_dyn = game.N * game.state_dims[1]
        lam_h = out.lam[n_dyn:]
        H = game.cost_hess(2, z1, z2)[d1:, :nx1].copy()
        if game.n_ineq(2) and np.any(out.mu):
            H += game.ineq_curvature(2, z1, z2, out.mu)[d1:, :nx1]
        if game.n_eq(2):
            H += game.eq_curvature(2, z1, z2, lam_h)[d1:, :nx1]
        deq = np.vstack([np.zeros((n_dyn, nx1)), game.eq_jac(2, z1, z2)[:, :nx1]])
        dg = game.ineq_jac(2, z1, z2)[:, :nx1]
        return kkt_sensitivity(p, out, H, deq, dg)


def br_residual(Z2: Trajectory, br: BestResponseOperator, X1, x2_0=None) -> float:
    """``|Z2 - br(X1)|_inf``."""
    x2_0 = Z2.X[0] if x2_0 is None else x2_0
    pred = br.evaluate(X1, x2_0)
    if pred.X.shape != Z2.X.shape or pred.U.shape != Z2.U.shape:
        raise ContractError("best-response output does not match Z2's shape")
    return float(np.max(np.abs(Z2.flatten() - pred.flatten()), initial=0.0))


# ----------------------------------------------------------------------------
# results
# ----------------------------------------------------------------------------

@dataclass
class EquilibriumResult:
    method: str
    Z1: Trajectory
    Z2: Trajectory
    status: Status
    iterations: int
    wall_time: float
    kkt_residual: Optional[KKTResidual]
    J1: float
    J2: float
    multipliers: Optional[Multipliers] = None
    multipliers2: Optional[Multipliers] = None
    br_residual_norm: Optional[float] = None
    step_change: Optional[float] = None
    trace: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status is Status.SUCCEEDED

    def to_dict(self, include_trajectories: bool = True) -> dict:
        d = {
            "method": self.method,
            "status": self.status.value,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "kkt_residual": None if self.kkt_residual is None else self.kkt_residual.as_dict(),
            "J1": self.J1,
            "J2": self.J2,
            "br_residual": self.br_residual_norm,
            "step_change": self.step_change,
        }
        if include_trajectories:
            d["Z1"] = self.Z1.to_dict()
            d["Z2"] = self.Z2.to_dict()
            if self.multipliers is not None:
                d["multipliers"] = self.multipliers.to_dict()
        return d


def _costs(game, Z1, Z2):
    try:
        return evaluate_cost(game, 1, Z1, Z2), evaluate_cost(game, 2, Z2, Z1)
    except (ArithmeticError, ValueError):
        return math.nan, math.nan


# ----------------------------------------------------------------------------
# reduced formulation
# ----------------------------------------------------------------------------

@dataclass
class ReducedLayout:
    """Index bookkeeping for the reduced decision ``y = (U1, X1, Z2)``."""

    nu1: int
    nx1: int
    d2: int

    @property
    def n(self) -> int:
        return self.nu1 + self.nx1 + self.d2

    @property
    def z1_index(self) -> np.ndarray:
        # flat Z1 is [X1, U1]
        return np.r_[self.nu1:self.nu1 + self.nx1, 0:self.nu1]

    @property
    def x1_index(self) -> np.ndarray:
        return np.arange(self.nu1, self.nu1 + self.nx1)

    @property
    def z2_slice(self) -> slice:
        return slice(self.nu1 + self.nx1, self.n)

    def pack(self, z1, z2) -> np.ndarray:
        y = np.empty(self.n)
        y[self.z1_index] = z1
        y[self.z2_slice] = z2
        return y

    def unpack(self, y):
        return y[self.z1_index], y[self.z2_slice]


def reduced_layout(game: GameSpec) -> ReducedLayout:
    lay1 = game.layout(1)
    return ReducedLayout(lay1.N * lay1.m, (lay1.N + 1) * lay1.n, game.size(2))


def build_reduced_problem(game: GameSpec, br: BestResponseOperator) -> NLPProblem:
    """Player 1's problem with Player 2 replaced by the constraint ``Z2 = B2(X1)``.

    Decision ``y = (U1, X1, Z2)``.  Equalities: Player 1's dynamics defects,
    ``h1``, then the best-response block.  Inequalities: ``g1``.  The field
    used for stationarity is ``grad_{Z1} J1`` with a zero ``Z2`` block.
    """
    L = reduced_layout(game)
    n = L.n
    iz1 = L.z1_index
    iz2 = np.arange(n)[L.z2_slice]
    ix1 = L.x1_index
    d1 = game.size(1)
    n_dyn = game.N * game.state_dims[0]
    n_h = game.n_eq(1)
    n_g = game.n_ineq(1)
    lay1 = game.layout(1)
    x2_0 = np.asarray(game.x0[1], float)

    def X1_of(y):
        return y[ix1].reshape(lay1.N + 1, lay1.n)

    def objective(y):
        z1, z2 = L.unpack(y)
        return game.cost(1, z1, z2)

    def gradient(y):
        z1, z2 = L.unpack(y)
        g = np.zeros(n)
        g[iz1] = game.cost_grad(1, z1, z2)[0]
        return g

    def hessian(y):
        z1, z2 = L.unpack(y)
        Hf = game.cost_hess(1, z1, z2)
        H = np.zeros((n, n))
        H[np.ix_(iz1, iz1)] = Hf[:d1, :d1]
        H[np.ix_(iz1, iz2)] = Hf[:d1, d1:]
        return H

    def eq(y):
        z1, z2 = L.unpack(y)
        pred = br.evaluate(X1_of(y), x2_0).flatten()
        if not br.valid:
            raise EvaluationError("best response undefined at this plan")
        return np.concatenate([game.defects(1, z1), game.eq(1, z1, z2), z2 - pred])

    def eq_jac(y):
        z1, z2 = L.unpack(y)
        J = np.zeros((n_dyn + n_h + L.d2, n))
        J[:n_dyn, iz1] = game.defects_jac(1, z1)
        if n_h:
            Jh = game.eq_jac(1, z1, z2)
            J[n_dyn:n_dyn + n_h, iz1] = Jh[:, :d1]
            J[n_dyn:n_dyn + n_h, iz2] = Jh[:, d1:]
        r = slice(n_dyn + n_h, None)
        J[r, iz2] = np.eye(L.d2)
        J[r, ix1] -= br.jacobian(X1_of(y), x2_0)
        return J

    def ineq(y):
        z1, z2 = L.unpack(y)
        return game.ineq(1, z1, z2)

    def ineq_jac(y):
        z1, z2 = L.unpack(y)
        Jg = game.ineq_jac(1, z1, z2)
        J = np.zeros((n_g, n))
        J[:, iz1] = Jg[:, :d1]
        J[:, iz2] = Jg[:, d1:]
        return J

    def curvature(y, y_eq, y_ineq):
        # rows owned by Z1 only; the best-response rows have constant masked gradients
        z1, z2 = L.unpack(y)
        H = np.zeros((n, n))
        H[np.ix_(iz1, iz1)] = game.defects_curvature(1, z1, y_eq[:n_dyn])
        full = np.zeros((d1 + L.d2, d1 + L.d2))
        if n_h:
            full += game.eq_curvature(1, z1, z2, y_eq[n_dyn:n_dyn + n_h])
        if n_g and np.any(y_ineq):
            full += game.ineq_curvature(1, z1, z2, y_ineq)
        H[np.ix_(iz1, iz1)] += full[:d1, :d1]
        H[np.ix_(iz1, iz2)] += full[:d1, d1:]
        return H

    eq_mask = np.zeros((n_dyn + n_h + L.d2, n), bool)
    eq_mask[:n_dyn + n_h, iz1] = True
    eq_mask[n_dyn + n_h:, iz2] = True
    ineq_mask = np.zeros((n_g, n), bool)
    ineq_mask[:, iz1] = True

    # box constraints on both blocks; x2_0 is pinned by Player 2's decision bounds
    lo1, hi1 = game.decision_bounds(1)
    lo2, hi2 = game.decision_bounds(2)
    return NLPProblem(
        n=n, objective=objective, gradient=gradient, hessian=hessian,
        n_eq=n_dyn + n_h + L.d2, eq=eq, eq_jac=eq_jac,
        n_ineq=n_g, ineq=ineq, ineq_jac=ineq_jac,
        lower=L.pack(lo1, lo2), upper=L.pack(hi1, hi2),
        curvature=curvature, eq_mask=eq_mask, ineq_mask=ineq_mask,
    )


def solve_reduced(game: GameSpec, br: BestResponseOperator, init=None,
                  opts: SolverOptions | None = None) -> EquilibriumResult:
    """Solve the reduced formulation.  ``init`` is ``(Z1, Z2)`` or ``None``.

    With ``init=None`` Player 1 starts from the zero-input rollout and
    ``Z2`` from ``br`` evaluated on that plan.
    """
    t0 = time.perf_counter()
    L = reduced_layout(game)
    x2_0 = np.asarray(game.x0[1], float)
    if init is None:
        Z1 = initial_guess(game)[0]
        Z2 = br.evaluate(Z1.X, x2_0)
    else:
        Z1, Z2 = init
    game.check(1, Z1)
    game.check(2, Z2)
    p = build_reduced_problem(game, br)
    out = solve_nlp(p, L.pack(Z1.flatten(), Z2.flatten()), opts)
    z1, z2 = L.unpack(out.x)
    Z1 = game.trajectory(1, z1)
    Z2 = game.trajectory(2, z2)
    try:
        r_br = br_residual(Z2, br, Z1.X, x2_0)
    except (ArithmeticError, ValueError):
        r_br = math.nan
    J1, J2 = _costs(game, Z1, Z2)
    n1 = game.N * game.state_dims[0] + game.n_eq(1)
    return EquilibriumResult(
        method="reduced", Z1=Z1, Z2=Z2, status=out.status, iterations=out.iterations,
        wall_time=time.perf_counter() - t0, kkt_residual=out.residual, J1=J1, J2=J2,
        multipliers=Multipliers(out.lam[:n1], out.mu), br_residual_norm=r_br,
        trace=out.trace,
    )


# ----------------------------------------------------------------------------
# iterative best response
# ----------------------------------------------------------------------------

def solve_ibr(game: GameSpec, init=None, max_outer: int = 50, tol: float = 1e-6,
              opts: SolverOptions | None = None) -> EquilibriumResult:
    """Gauss-Seidel best responses: ``Z2 <- BR2(Z1)`` then ``Z1 <- BR1(Z2)``.

    Stops when the largest change of either block over a sweep is at most
    ``tol``.  Inner problems use ``opts`` (tolerance ``tol`` by default) and
    are warm-started from the previous sweep.
    """
    t0 = time.perf_counter()
    if max_outer < 1:
        raise ValueError("max_outer must be >= 1")
    if opts is None:
        inner_tol = tol if math.isfinite(tol) and tol > 0 else 1e-6
        opts = SolverOptions(tol=inner_tol)
    Z1, Z2 = initial_guess(game) if init is None else init
    game.check(1, Z1)
    game.check(2, Z2)
    warm = {1: None, 2: None}
    trace = []
    status = Status.MAX_ITER
    change = math.inf
    sweeps = 0
    last = None
    for sweeps in range(1, max_outer + 1):
        new = {}
        for player, Z_self, Z_other in ((2, Z2, None), (1, Z1, None)):
            Z_other = new.get(1, Z1) if player == 2 else new[2]
            sol = solve_best_response(game, player, Z_other, Z_self, opts, warm[player])
            last = sol.outcome
            if not sol.outcome.success:
                status = Status.NUMERICAL_FAILURE
                break
            warm[player] = sol.outcome
            new[player] = sol.Z
        if status is Status.NUMERICAL_FAILURE:
            trace.append({"sweep": sweeps, "failed_player": player,
                          "inner_status": last.status.value})
            if player == 1 and 2 in new:
                Z2 = new[2]
            break
        change = max(float(np.max(np.abs(new[1].flatten() - Z1.flatten()))),
                     float(np.max(np.abs(new[2].flatten() - Z2.flatten()))))
        Z1, Z2 = new[1], new[2]
        trace.append({"sweep": sweeps, "change": change})
        if change <= tol:
            status = Status.SUCCEEDED
            break
    J1, J2 = _costs(game, Z1, Z2)
    return EquilibriumResult(
        method="ibr", Z1=Z1, Z2=Z2, status=status, iterations=sweeps,
        wall_time=time.perf_counter() - t0,
        kkt_residual=None if last is None else last.residual, J1=J1, J2=J2,
        multipliers=None if warm[1] is None else Multipliers(warm[1].lam, warm[1].mu),
        multipliers2=None if warm[2] is None else Multipliers(warm[2].lam, warm[2].mu),
        step_change=change, trace=trace,
    )


# ----------------------------------------------------------------------------
# joint KKT baseline
# ----------------------------------------------------------------------------

def build_joint_problem(game: GameSpec) -> NLPProblem:
    """Both players' first-order systems as one variational problem over ``(Z1, Z2)``.

    Each player keeps its own copy of every coupling inequality, so a shared
    constraint carries one multiplier per player.
    """
    d1, d2 = game.size(1), game.size(2)
    n = d1 + d2
    b1, b2 = slice(0, d1), slice(d1, n)
    nd = (game.N * game.state_dims[0], game.N * game.state_dims[1])
    nh = (game.n_eq(1), game.n_eq(2))
    ng = (game.n_ineq(1), game.n_ineq(2))
    n_eq = sum(nd) + sum(nh)
    n_in = sum(ng)
    # equality rows: [dyn1, h1, dyn2, h2]; inequality rows: [g1, g2]
    e1 = slice(0, nd[0] + nh[0])
    e2 = slice(nd[0] + nh[0], n_eq)

    def objective(z):
        return game.cost(1, z[b1], z[b2]) + game.cost(2, z[b1], z[b2])

    def gradient(z):
        return np.concatenate([game.cost_grad(1, z[b1], z[b2])[0], game.cost_grad(2, z[b1], z[b2])[1]])

    def hessian(z):
        H1 = game.cost_hess(1, z[b1], z[b2])
        H2 = game.cost_hess(2, z[b1], z[b2])
        return np.vstack([H1[b1], H2[b2]])

    def eq(z):
        return np.concatenate([game.defects(1, z[b1]), game.eq(1, z[b1], z[b2]),
                               game.defects(2, z[b2]), game.eq(2, z[b1], z[b2])])

    def eq_jac(z):
        J = np.zeros((n_eq, n))
        J[:nd[0], b1] = game.defects_jac(1, z[b1])
        J[nd[0]:e1.stop] = game.eq_jac(1, z[b1], z[b2])
        J[e2.start:e2.start + nd[1], b2] = game.defects_jac(2, z[b2])
        J[e2.start + nd[1]:] = game.eq_jac(2, z[b1], z[b2])
        return J

    def ineq(z):
        return np.concatenate([game.ineq(1, z[b1], z[b2]), game.ineq(2, z[b1], z[b2])])

    def ineq_jac(z):
        return np.vstack([game.ineq_jac(1, z[b1], z[b2]), game.ineq_jac(2, z[b1], z[b2])])

    def curvature(z, y_eq, y_ineq):
        z1, z2 = z[b1], z[b2]
        H = np.zeros((n, n))
        H[b1, b1] = game.defects_curvature(1, z1, y_eq[:nd[0]])
        H[b2, b2] = game.defects_curvature(2, z2, y_eq[e2.start:e2.start + nd[1]])
        for player, rows, er, gr in ((1, b1, slice(nd[0], e1.stop), slice(0, ng[0])),
                                     (2, b2, slice(e2.start + nd[1], n_eq), slice(ng[0], n_in))):
            full = np.zeros((n, n))
            if nh[player - 1]:
                full += game.eq_curvature(player, z1, z2, y_eq[er])
            if ng[player - 1] and np.any(y_ineq[gr]):
                full += game.ineq_curvature(player, z1, z2, y_ineq[gr])
            H[rows] += full[rows]
        return H

    eq_mask = np.zeros((n_eq, n), bool)
    eq_mask[e1, b1] = True
    eq_mask[e2, b2] = True
    ineq_mask = np.zeros((n_in, n), bool)
    ineq_mask[:ng[0], b1] = True
    ineq_mask[ng[0]:, b2] = True
    lo1, hi1 = game.decision_bounds(1)
    lo2, hi2 = game.decision_bounds(2)
    return NLPProblem(
        n=n, objective=objective, gradient=gradient, hessian=hessian,
        n_eq=n_eq, eq=eq, eq_jac=eq_jac, n_ineq=n_in, ineq=ineq, ineq_jac=ineq_jac,
        lower=np.r_[lo1, lo2], upper=np.r_[hi1, hi2], curvature=curvature,
        eq_mask=eq_mask, ineq_mask=ineq_mask,
    )


def solve_joint_kkt(game: GameSpec, init=None, opts: SolverOptions | None = None,
                    active_tol: float = 1e-3) -> EquilibriumResult:
    """Full-information baseline on the stacked first-order systems of both players.

    Phase A runs damped Newton with the active set frozen at the initial
    guess (inequalities within ``active_tol`` of binding are equalities,
    variables on their bounds stay fixed).  If the result is not a verified
    KKT point, phase B runs the masked augmented Lagrangian from the same
    initial guess.
    """
    t0 = time.perf_counter()
    opts = opts or SolverOptions()
    Z1, Z2 = initial_guess(game) if init is None else init
    game.check(1, Z1)
    game.check(2, Z2)
    p = build_joint_problem(game)
    d1 = game.size(1)
    x0 = np.concatenate([Z1.flatten(), Z2.flatten()])
    g0 = p.eval_ineq(x0)
    act = g0 >= -active_tol
    try:
        x, lam, mu, it, ok = newton_kkt(p, x0, act, tol=0.1 * opts.tol)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        x, lam, mu, it, ok = x0, None, None, 0, False
    status, residual = Status.NUMERICAL_FAILURE, None
    if ok:
        residual = kkt_residual(p, x, lam, mu)
        inside = np.all(x >= p.lower - opts.tol) and np.all(x <= p.upper + opts.tol)
        if residual.max() <= opts.tol and inside:
            status = Status.SUCCEEDED
    iterations = it
    trace = [{"phase": "newton", "iterations": it, "converged": bool(ok)}]
    if status is not Status.SUCCEEDED:
        out = solve_nlp(p, x0, opts)
        x, lam, mu = out.x, out.lam, out.mu
        status, residual = out.status, out.residual
        iterations += out.iterations
        trace.append({"phase": "augmented_lagrangian", "iterations": out.iterations,
                      "status": out.status.value})
    Z1 = game.trajectory(1, x[:d1])
    Z2 = game.trajectory(2, x[d1:])
    J1, J2 = _costs(game, Z1, Z2)
    ne1 = game.N * game.state_dims[0] + game.n_eq(1)
    ng1 = game.n_ineq(1)
    return EquilibriumResult(
        method="joint", Z1=Z1, Z2=Z2, status=status, iterations=iterations,
        wall_time=time.perf_counter() - t0, kkt_residual=residual, J1=J1, J2=J2,
        multipliers=Multipliers(lam[:ne1], mu[:ng1]),
        multipliers2=Multipliers(lam[ne1:], mu[ng1:]), trace=trace,
    )
