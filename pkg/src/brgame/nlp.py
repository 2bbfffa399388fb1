"""Self-contained smooth constrained NLP solver.

Solves::

    min f(x)   s.t.   c(x) = 0,   g(x) <= 0,   lower <= x <= upper

with an augmented Lagrangian outer loop and a projected damped-Newton inner
loop.  Box bounds are never penalized; they are enforced by projection.

The solver also accepts *variational* problems, where the "gradient" is a
stacked field of partial gradients that need not integrate to a scalar
function, and where each constraint row may enter stationarity only through
a subset of the variables (``eq_mask`` / ``ineq_mask``).  Game formulations
use this to keep each player's first-order conditions partial with respect to
its own variables.  For such problems the inner loop uses the norm of the
projected stationarity residual as its merit function.

Lagrangian sign convention: ``L = f + lam^T c + mu^T g`` with ``mu >= 0``.
"""

from __future__ import annotations

import csv
import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from brgame.errors import ContractError


class Status(str, enum.Enum):
    SUCCEEDED = "Succeeded"
    INFEASIBLE = "InfeasibleDetected"
    MAX_ITER = "MaxIterExceeded"
    NUMERICAL_FAILURE = "NumericalFailure"


class EvaluationError(ArithmeticError):
    """Raised by evaluators that cannot produce a value at the requested point."""


@dataclass
class NLPProblem:
    """Callable description of a smooth constrained program.

    ``eq_jac``/``ineq_jac`` return dense ``(p, n)``/``(q, n)`` arrays.
    ``hessian`` is the Jacobian of ``gradient`` (BFGS is used when omitted);
    ``curvature(x, y_eq, y_ineq)`` returns the Jacobian w.r.t. ``x`` of the
    (masked) multiplier-weighted constraint gradients, or is omitted for a
    Gauss-Newton treatment of the constraints.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    n_eq: int = 0
    eq: Optional[Callable] = None
    eq_jac: Optional[Callable] = None
    n_ineq: int = 0
    ineq: Optional[Callable] = None
    ineq_jac: Optional[Callable] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    hessian: Optional[Callable] = None
    curvature: Optional[Callable] = None
    eq_mask: Optional[np.ndarray] = None
    ineq_mask: Optional[np.ndarray] = None
    variational: bool = False

    def __post_init__(self):
        n = self.n
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ContractError("bounds must have shape (n,)")
        if np.any(self.lower > self.upper):
            raise ContractError("lower bound exceeds upper bound")
        if self.n_eq and (self.eq is None or self.eq_jac is None):
            raise ContractError("equality evaluators missing")
        if self.n_ineq and (self.ineq is None or self.ineq_jac is None):
            raise ContractError("inequality evaluators missing")
        if self.eq_mask is not None:
            self.eq_mask = np.asarray(self.eq_mask, dtype=bool).reshape(self.n_eq, n)
        if self.ineq_mask is not None:
            self.ineq_mask = np.asarray(self.ineq_mask, dtype=bool).reshape(self.n_ineq, n)
        if self.eq_mask is not None or self.ineq_mask is not None:
            self.variational = True

    # evaluation helpers -------------------------------------------------
    def eval_eq(self, x):
        return np.asarray(self.eq(x), float) if self.n_eq else np.zeros(0)

    def eval_ineq(self, x):
        return np.asarray(self.ineq(x), float) if self.n_ineq else np.zeros(0)

    def jacobians(self, x):
        """Full constraint Jacobians and their stationarity (masked) versions."""
        Jc = np.asarray(self.eq_jac(x), float) if self.n_eq else np.zeros((0, self.n))
        Jg = np.asarray(self.ineq_jac(x), float) if self.n_ineq else np.zeros((0, self.n))
        Jcs = Jc if self.eq_mask is None else np.where(self.eq_mask, Jc, 0.0)
        Jgs = Jg if self.ineq_mask is None else np.where(self.ineq_mask, Jg, 0.0)
        return Jc, Jg, Jcs, Jgs


@dataclass
class SolverOptions:
    tol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 150
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    multiplier_bound: float = 1e8
    time_limit: float = 300.0
    infeasible_residual: float = 1e-4
    inner_tol0: float = 1e-2
    polish: bool = True
    polish_threshold: float = 1e-2
    trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")
        if not self.rho_growth > 1:
            raise ValueError("rho_growth must exceed 1")


@dataclass
class KKTResidual:
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    dual_feas: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq,
                   self.complementarity, self.dual_feas)

    @property
    def primal(self) -> float:
        return max(self.primal_eq, self.primal_ineq)

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal_eq": self.primal_eq,
            "primal_ineq": self.primal_ineq,
            "complementarity": self.complementarity,
            "dual_feas": self.dual_feas,
        }


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    iterations: int
    outer_iterations: int
    wall_time: float
    residual: KKTResidual
    objective: float
    rho: float
    rho_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status is Status.SUCCEEDED


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def kkt_residual(p: NLPProblem, x, lam=None, mu=None) -> KKTResidual:
    """Residuals of the first-order system at ``(x, lam, mu)``.

    Stationarity is measured as ``|x - P(x - grad L)|_inf`` so that active box
    bounds absorb their implicit multipliers.
    """
    x = np.asarray(x, float)
    lam = np.zeros(p.n_eq) if lam is None else np.asarray(lam, float)
    mu = np.zeros(p.n_ineq) if mu is None else np.asarray(mu, float)
    if lam.shape != (p.n_eq,) or mu.shape != (p.n_ineq,) or x.shape != (p.n,):
        raise ContractError("dimension mismatch in kkt_residual")
    c = p.eval_eq(x)
    g = p.eval_ineq(x)
    _, _, Jcs, Jgs = p.jacobians(x)
    grad = np.asarray(p.gradient(x), float) + Jcs.T @ lam + Jgs.T @ mu
    stat = x - _project(x - grad, p.lower, p.upper)
    return KKTResidual(
        stationarity=_inf_norm(stat),
        primal_eq=_inf_norm(c),
        primal_ineq=_inf_norm(np.maximum(g, 0.0)),
        complementarity=_inf_norm(mu * g),
        dual_feas=_inf_norm(np.maximum(-mu, 0.0)),
    )


def finite_diff_jacobian(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, one column per coordinate of ``x``."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.atleast_1d(np.asarray(f(xp), dtype=float)).ravel()
        fm = np.atleast_1d(np.asarray(f(xm), dtype=float)).ravel()
        J[:, j] = (fp - fm) / (2.0 * h)
    return J


class _AugmentedLagrangian:
    """Inner-subproblem evaluator for fixed multipliers and penalty."""

    def __init__(self, p: NLPProblem, lam, mu, rho):
        self.p = p
        self.lam = lam
        self.mu = mu
        self.rho = rho

    def value(self, x):
        p, rho = self.p, self.rho
        f = float(p.objective(x))
        c = p.eval_eq(x)
        g = p.eval_ineq(x)
        val = f + self.lam @ c + 0.5 * rho * (c @ c)
        val += (np.sum(np.maximum(0.0, self.mu + rho * g) ** 2) - self.mu @ self.mu) / (2 * rho)
        return val

    def field(self, x):
        """Return the AL stationarity field plus the pieces needed for Newton."""
        p, rho = self.p, self.rho
        c = p.eval_eq(x)
        g = p.eval_ineq(x)
        Jc, Jg, Jcs, Jgs = p.jacobians(x)
        yc = self.lam + rho * c
        yg = np.maximum(0.0, self.mu + rho * g)
        grad = np.asarray(p.gradient(x), float)
        F = grad + Jcs.T @ yc + Jgs.T @ yg
        return F, grad, (c, g, Jc, Jg, Jcs, Jgs, yc, yg)

    def field_only(self, x):
        p, rho = self.p, self.rho
        c = p.eval_eq(x)
        g = p.eval_ineq(x)
        _, _, Jcs, Jgs = p.jacobians(x)
        yc = self.lam + rho * c
        yg = np.maximum(0.0, self.mu + rho * g)
        return np.asarray(p.gradient(x), float) + Jcs.T @ yc + Jgs.T @ yg

    def newton_matrix(self, x, parts, Hf):
        p, rho = self.p, self.rho
        c, g, Jc, Jg, Jcs, Jgs, yc, yg = parts
        K = Hf.copy()
        if p.curvature is not None and (p.n_eq or p.n_ineq):
            K += p.curvature(x, yc, yg)
        if p.n_eq:
            K += rho * (Jcs.T @ Jc)
        if p.n_ineq:
            active = (self.mu + rho * g) > 0
            if np.any(active):
                K += rho * (Jgs[active].T @ Jg[active])
        return K


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _safe(fn, *args):
    try:
        out = fn(*args)
    except (ArithmeticError, ValueError, FloatingPointError):
        return None
    if out is None:
        return None
    if not _finite(np.asarray(out, float)):
        return None
    return out


def _inner_solve(p: NLPProblem, al: _AugmentedLagrangian, x, omega, max_inner, bfgs, deadline):
    """Projected Newton on the AL subproblem.  Returns ``(x, iterations, ok)``."""
    lo, hi = p.lower, p.upper
    fixed = lo == hi
    integrable = not p.variational
    iters = 0
    best = math.inf
    no_progress = 0
    F, grad, parts = al.field(x)
    if not _finite(F):
        raise FloatingPointError("non-finite gradient")
    while iters < max_inner:
        r = x - _project(x - F, lo, hi)
        rnorm = _inf_norm(r)
        if rnorm <= omega:
            return x, iters, True
        if time.perf_counter() > deadline:
            return x, iters, False
        # give up on a stalled subproblem; the outer loop decides what happens next
        if rnorm < 0.99 * best:
            best, no_progress = rnorm, 0
        else:
            no_progress += 1
            if no_progress >= 20:
                return x, iters, False
        iters += 1

        eps = min(1e-6, rnorm)
        at_lo = (x <= lo + eps) & (F > 0)
        at_hi = (x >= hi - eps) & (F < 0)
        free = ~(at_lo | at_hi | fixed)
        if not np.any(free):
            # only bound moves remain; projection resolves them in one step
            x = _project(x - F, lo, hi)
            F, grad, parts = al.field(x)
            continue

        if p.hessian is not None:
            Hf = np.asarray(p.hessian(x), float)
        else:
            Hf = bfgs.matrix
        K = al.newton_matrix(x, parts, Hf)
        KF = K[np.ix_(free, free)]
        d = np.zeros_like(x)

        if integrable:
            d_free = _regularized_spd_solve(KF, -F[free])
            d[free] = d_free
            # bound-active coordinates follow the projected gradient
            d[~free & ~fixed] = -F[~free & ~fixed]
            phi0 = al.value(x)
            x_new, ok = _armijo(al.value, x, d, phi0, F, lo, hi)
            if not ok:
                x_new, ok = _armijo(al.value, x, -F * ~fixed, phi0, F, lo, hi)
                if not ok:
                    return x, iters, False
        else:
            x_new = _variational_step(p, al, x, F, KF, free, lo, hi)
            if x_new is None:
                return x, iters, False

        F_new, grad_new, parts_new = al.field(x_new)
        if not _finite(F_new):
            raise FloatingPointError("non-finite gradient")
        if p.hessian is None:
            bfgs.update(x_new - x, grad_new - grad)
        x, F, grad, parts = x_new, F_new, grad_new, parts_new
    r = x - _project(x - F, lo, hi)
    return x, iters, _inf_norm(r) <= omega


def _regularized_spd_solve(K, rhs):
    K = 0.5 * (K + K.T)
    diag_scale = max(1e-12, float(np.max(np.abs(np.diag(K)))) if K.size else 1.0)
    tau = 0.0
    eye = np.eye(K.shape[0])
    for _ in range(40):
        try:
            L = np.linalg.cholesky(K + tau * eye)
            y = np.linalg.solve(L, rhs)
            return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            tau = max(1e-10 * diag_scale, 10.0 * tau)
    return rhs / diag_scale


def _armijo(value, x, d, phi0, F, lo, hi, sigma=1e-4, max_backtracks=40):
    alpha = 1.0
    for _ in range(max_backtracks):
        x_new = _project(x + alpha * d, lo, hi)
        step = x_new - x
        if not np.any(step):
            return x, False
        phi = _safe(value, x_new)
        if phi is not None and phi <= phi0 + sigma * (F @ step):
            return x_new, True
        alpha *= 0.5
    return x, False


def _variational_step(p, al, x, F, KF, free, lo, hi):
    """Damped Newton on the projected stationarity residual, LM fallback."""

    def merit(z):
        Fz = _safe(al.field_only, z)
        if Fz is None:
            return None
        rz = z - _project(z - Fz, lo, hi)
        return 0.5 * float(rz @ rz)

    r0 = x - _project(x - F, lo, hi)
    phi0 = 0.5 * float(r0 @ r0)
    rhs = -F[free]
    directions = []
    try:
        d_free = np.linalg.solve(KF, rhs)
        if _finite(d_free):
            directions.append(d_free)
    except np.linalg.LinAlgError:
        pass
    JtJ = KF.T @ KF
    scale = max(1e-12, float(np.max(np.abs(np.diag(JtJ)))))
    for tau in (1e-6, 1e-3, 1.0):
        try:
            directions.append(np.linalg.solve(JtJ + tau * scale * np.eye(JtJ.shape[0]), KF.T @ rhs))
        except np.linalg.LinAlgError:
            continue
    for d_free in directions:
        d = np.zeros_like(x)
        d[free] = d_free
        alpha = 1.0
        for _ in range(30):
            x_new = _project(x + alpha * d, lo, hi)
            phi = merit(x_new)
            if phi is not None and phi <= (1.0 - 1e-4 * alpha) * phi0:
                return x_new
            alpha *= 0.5
    return None


class _BFGS:
    def __init__(self, n):
        self.matrix = np.eye(n)

    def update(self, s, y):
        B = self.matrix
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs <= 1e-16:
            return
        sy = float(s @ y)
        # Powell damping keeps the update positive definite
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = float(s @ y)
        self.matrix = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy


def solve_nlp(p: NLPProblem, x0, opts: SolverOptions | None = None,
              lam0=None, mu0=None, rho0: float | None = None) -> SolveOutcome:
    """Solve ``p`` from ``x0``; deterministic given its inputs.

    ``lam0``/``mu0``/``rho0`` warm-start the multipliers and penalty.
    """
    opts = opts or SolverOptions()
    t_start = time.perf_counter()
    deadline = t_start + opts.time_limit
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (p.n,):
        raise ContractError(f"x0 has shape {x.shape}, expected ({p.n},)")
    x = _project(x, p.lower, p.upper)
    lam = np.zeros(p.n_eq) if lam0 is None else np.asarray(lam0, float).copy()
    mu = np.zeros(p.n_ineq) if mu0 is None else np.maximum(np.asarray(mu0, float), 0.0)
    rho = opts.rho0 if rho0 is None else max(float(rho0), opts.rho0)
    bound = opts.multiplier_bound
    bfgs = _BFGS(p.n)
    omega = max(opts.inner_tol0, 0.5 * opts.tol)
    total_iters = 0
    rho_history = [rho]
    trace = []
    prev_primal = math.inf
    status = Status.MAX_ITER
    residual = None
    outer = 0

    def finish(status_, residual_):
        try:
            obj = float(p.objective(x))
        except (ArithmeticError, ValueError):
            obj = math.nan
        return SolveOutcome(
            status=status_, x=x, lam=lam, mu=mu, iterations=total_iters,
            outer_iterations=outer, wall_time=time.perf_counter() - t_start,
            residual=residual_, objective=obj, rho=rho, rho_history=rho_history,
            trace=trace,
        )

    nan_residual = KKTResidual(math.inf, math.inf, math.inf, math.inf, math.inf)
    try:
        residual = kkt_residual(p, x, lam, mu)
    except (ArithmeticError, ValueError):
        return finish(Status.NUMERICAL_FAILURE, nan_residual)
    if not math.isfinite(residual.max()):
        return finish(Status.NUMERICAL_FAILURE, residual)
    if residual.max() <= opts.tol:
        return finish(Status.SUCCEEDED, residual)

    while outer < opts.max_outer:
        outer += 1
        al = _AugmentedLagrangian(p, lam, mu, rho)
        try:
            x, it, _ = _inner_solve(p, al, x, omega, opts.max_inner, bfgs, deadline)
        except (ArithmeticError, ValueError):
            return finish(Status.NUMERICAL_FAILURE, residual or nan_residual)
        total_iters += it

        c = p.eval_eq(x)
        g = p.eval_ineq(x)
        if not _finite(c, g):
            return finish(Status.NUMERICAL_FAILURE, residual)
        primal = max(_inf_norm(c), _inf_norm(np.maximum(g, -mu / rho)))
        lam = np.clip(lam + rho * c, -bound, bound)
        mu = np.clip(mu + rho * g, 0.0, bound)
        residual = kkt_residual(p, x, lam, mu)
        if opts.trace:
            trace.append({"outer": outer, "iterations": total_iters,
                          "objective": float(p.objective(x)), "rho": rho,
                          **residual.as_dict()})
        if not math.isfinite(residual.max()):
            return finish(Status.NUMERICAL_FAILURE, residual)
        if opts.polish and p.hessian is not None and opts.tol < residual.max() <= opts.polish_threshold:
            polished = _polish(p, x, lam, mu, opts.tol, residual)
            if polished is not None:
                x, lam, mu, residual = polished
        if residual.max() <= opts.tol:
            return finish(Status.SUCCEEDED, residual)
        stalled = primal > 0.9 * prev_primal
        if (rho >= opts.rho_max and residual.primal > opts.infeasible_residual and stalled):
            return finish(Status.INFEASIBLE, residual)
        if time.perf_counter() > deadline:
            return finish(Status.MAX_ITER, residual)
        if primal > 0.25 * prev_primal and primal > 0.5 * opts.tol:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        rho_history.append(rho)
        prev_primal = primal
        omega = max(0.1 * omega, 0.5 * opts.tol)
    return finish(status, residual)


def _polish(p: NLPProblem, x, lam, mu, tol, residual):
    """Active-set Newton refinement; returns an improved point or ``None``."""
    act = mu > 0 if p.n_ineq else np.zeros(0, bool)
    try:
        xn, ln, mn, _, _ = newton_kkt(p, x, act, lam, mu, tol=0.1 * tol, max_iter=8)
        if not _finite(xn, ln, mn):
            return None
        res = kkt_residual(p, xn, ln, mn)
        if np.any(mn < 0):
            mn = np.maximum(mn, 0.0)
            res = kkt_residual(p, xn, ln, mn)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return None
    if np.any(xn < p.lower) or np.any(xn > p.upper) or not res.max() < residual.max():
        return None
    return xn, ln, mn, res


def lagrangian_jacobian(p: NLPProblem, x, lam, mu) -> np.ndarray:
    """Jacobian of the (masked) stationarity field at fixed multipliers."""
    if p.hessian is None:
        raise ContractError("problem has no Hessian evaluator")
    H = np.asarray(p.hessian(x), float).copy()
    if p.curvature is not None and (p.n_eq or p.n_ineq):
        H += p.curvature(x, np.asarray(lam, float), np.asarray(mu, float))
    return H


def kkt_sensitivity(p: NLPProblem, outcome: SolveOutcome, dfield_dp, deq_dp, dineq_dp,
                    active_tol: float = 1e-7) -> np.ndarray:
    """Derivative of a KKT point with respect to a parameter vector.

    ``dfield_dp`` is the derivative of the stationarity field (gradient plus
    multiplier-weighted constraint gradients) w.r.t. the parameters at fixed
    ``x`` and multipliers; ``deq_dp``/``dineq_dp`` are constraint derivatives.
    Active set: bound-pinned variables, and inequalities with positive
    multiplier.  Solved in the least-squares sense for robustness.
    """
    x, lam, mu = outcome.x, outcome.lam, outcome.mu
    n = p.n
    npar = np.asarray(dfield_dp).shape[1]
    H = lagrangian_jacobian(p, x, lam, mu)
    Jc, Jg, Jcs, Jgs = p.jacobians(x)
    grad = np.asarray(p.gradient(x), float) + Jcs.T @ lam + Jgs.T @ mu
    pinned = (p.lower == p.upper)
    pinned |= (x <= p.lower + active_tol) & (grad > 0)
    pinned |= (x >= p.upper - active_tol) & (grad < 0)
    free = ~pinned
    act = mu > active_tol if p.n_ineq else np.zeros(0, bool)
    A = np.vstack([Jc, Jg[act]])[:, free]
    As = np.vstack([Jcs, Jgs[act]])[:, free]
    dA = np.vstack([np.asarray(deq_dp, float).reshape(p.n_eq, npar),
                    np.asarray(dineq_dp, float).reshape(p.n_ineq, npar)[act]])
    nf = int(free.sum())
    m = A.shape[0]
    KKT = np.zeros((nf + m, nf + m))
    KKT[:nf, :nf] = H[np.ix_(free, free)]
    KKT[:nf, nf:] = As.T
    KKT[nf:, :nf] = A
    rhs = -np.vstack([np.asarray(dfield_dp, float)[free], dA])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
    dx = np.zeros((n, npar))
    dx[free] = sol[:nf]
    return dx


def write_trace_csv(outcome: SolveOutcome, path) -> None:
    fields = ["outer", "iterations", "objective", "rho", "stationarity", "primal_eq",
              "primal_ineq", "complementarity", "dual_feas"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in outcome.trace:
            w.writerow(row)


def newton_kkt(p: NLPProblem, x0, active_ineq=None, lam0=None, mu0=None,
               tol: float = 1e-10, max_iter: int = 50):
    """Damped Newton on the first-order system with a frozen active set.

    Active inequalities are treated as equalities, inactive ones are dropped,
    and variables pinned by their bounds or sitting on a bound at ``x0`` are
    frozen.  Returns ``(x, lam, mu, iterations, converged)``; callers must
    check the full KKT residual afterwards, since the frozen active set may
    be wrong.
    """
    if p.hessian is None:
        raise ContractError("newton_kkt needs a Hessian evaluator")
    x = _project(np.asarray(x0, float).copy(), p.lower, p.upper)
    act = np.zeros(p.n_ineq, bool) if active_ineq is None else np.asarray(active_ineq, bool)
    lam = np.zeros(p.n_eq) if lam0 is None else np.asarray(lam0, float).copy()
    mu = np.zeros(p.n_ineq) if mu0 is None else np.asarray(mu0, float).copy()
    mu[~act] = 0.0
    free = ~((p.lower == p.upper) | (x <= p.lower) | (x >= p.upper))
    nf = int(free.sum())
    ne = p.n_eq
    na = int(act.sum())

    def system(x, lam, mu):
        c = p.eval_eq(x)
        g = p.eval_ineq(x)
        _, _, Jcs, Jgs = p.jacobians(x)
        grad = np.asarray(p.gradient(x), float) + Jcs.T @ lam + Jgs.T @ mu
        return np.concatenate([grad[free], c, g[act]])

    def merit(x, lam, mu):
        r = _safe(system, x, lam, mu)
        return None if r is None else 0.5 * float(r @ r)

    F = system(x, lam, mu)
    it = 0
    while it < max_iter:
        if _inf_norm(F) <= tol:
            return x, lam, mu, it, True
        it += 1
        Jc, Jg, Jcs, Jgs = p.jacobians(x)
        H = lagrangian_jacobian(p, x, lam, mu)
        M = np.zeros((nf + ne + na, nf + ne + na))
        M[:nf, :nf] = H[np.ix_(free, free)]
        M[:nf, nf:nf + ne] = Jcs[:, free].T
        M[:nf, nf + ne:] = Jgs[act][:, free].T
        M[nf:nf + ne, :nf] = Jc[:, free]
        M[nf + ne:, :nf] = Jg[act][:, free]
        try:
            step = np.linalg.solve(M, -F)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(M, -F, rcond=None)[0]
        if not _finite(step):
            return x, lam, mu, it, False
        phi0 = 0.5 * float(F @ F)
        alpha = 1.0
        accepted = False
        for _ in range(30):
            xn = x.copy()
            xn[free] += alpha * step[:nf]
            ln = lam + alpha * step[nf:nf + ne]
            mn = mu.copy()
            mn[act] += alpha * step[nf + ne:]
            phi = merit(xn, ln, mn)
            if phi is not None and phi <= (1.0 - 1e-4 * alpha) * phi0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, lam, mu, it, False
        x, lam, mu = xn, ln, mn
        F = system(x, lam, mu)
    return x, lam, mu, it, _inf_norm(F) <= tol
