"""Two-car racing game on the quarter-circle track.

Both players follow the Frenet bicycle model.  Player ``i`` pays::

    sum_k  u_k^T R_u u_k + (u_k - u_{k-1})^T P_du (u_k - u_{k-1}) + q_v v_k^2
    + q_other * s_{-i,N} - q_self * s_{i,N}

with ``u_{-1} = 0`` and diagonal ``R_u``, ``P_du``.  The shared coupling
constraint is ``d_safe^2 - |p_1,k - p_2,k|^2 <= 0`` for ``k = 0..N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from brgame import kernels
from brgame.frenet import Bounds, TrackParams, VehicleParams, cartesian_jacobian, frenet_to_cartesian
from brgame.game import GameSpec, QuadraticCost

S_IDX, T_IDX, V_IDX, PSI_IDX = 2, 3, 0, 1


@dataclass(frozen=True)
class CostWeights:
    R_u: tuple = (0.02, 0.2)
    P_du: tuple = (0.02, 0.2)
    q_v: float = 0.01
    q_self: float = 1.0
    q_other: float = 0.5

    def __post_init__(self):
        if len(self.R_u) != 2 or len(self.P_du) != 2:
            raise ValueError("R_u and P_du take one weight per input channel")
        if min(self.R_u) <= 0 or min(self.P_du) <= 0:
            raise ValueError("R_u and P_du must be positive definite")
        if self.q_v < 0 or self.q_self < 0 or self.q_other < 0:
            raise ValueError("scalar weights must be nonnegative")


@dataclass(frozen=True)
class RacingParams:
    track: TrackParams = field(default_factory=TrackParams)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    bounds: Bounds = field(default_factory=Bounds)
    N: int = 10
    dt: float = 0.05
    weights: tuple = (CostWeights(), CostWeights())

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


class RacingGame(GameSpec):
    state_dims = (4, 4)
    input_dims = (2, 2)
    angle_dims = ((PSI_IDX,), (PSI_IDX,))

    def __init__(self, x1_0, x2_0, params: RacingParams | None = None, _costs=None):
        self.params = params or RacingParams()
        p = self.params
        self.N = p.N
        self.dt = p.dt
        self.track = p.track
        self.vehicle = p.vehicle
        self.bounds = p.bounds
        self.x0 = (np.asarray(x1_0, float).copy(), np.asarray(x2_0, float).copy())
        for x in self.x0:
            if x.shape != (4,):
                raise ValueError("racing initial states have 4 entries")
            x.setflags(write=False)
        self._costs = _costs or {1: self._build_cost(1), 2: self._build_cost(2)}
        d = self.size(1)
        self._s_cols = (np.array([self.layout(1).x_index(k, S_IDX) for k in range(p.N + 1)]),
                        d + np.array([self.layout(2).x_index(k, S_IDX) for k in range(p.N + 1)]))
        self._t_cols = (self._s_cols[0] + 1, self._s_cols[1] + 1)

    def with_initial_states(self, x1_0, x2_0) -> "RacingGame":
        return RacingGame(x1_0, x2_0, self.params, _costs=self._costs)

    # --- costs ----------------------------------------------------------------
    def _build_cost(self, player: int) -> QuadraticCost:
        N = self.params.N
        w = self.params.weights[player - 1]
        lay = self.layout(player)
        d1 = self.size(1)
        off = 0 if player == 1 else d1
        other_off = d1 if player == 1 else 0
        D = self.size(1) + self.size(2)
        Q = np.zeros((D, D))
        c = np.zeros(D)
        R = np.diag(w.R_u)
        P = np.diag(w.P_du)
        diff = np.eye(N) - np.eye(N, k=-1)
        Qu = 2.0 * (np.kron(np.eye(N), R) + np.kron(diff.T @ diff, P))
        us = off + lay.u_slice.start
        Q[us:us + 2 * N, us:us + 2 * N] += Qu
        for k in range(N):
            iv = off + lay.x_index(k, V_IDX)
            Q[iv, iv] += 2.0 * w.q_v
        c[off + lay.x_index(N, S_IDX)] -= w.q_self
        c[other_off + self.layout(3 - player).x_index(N, S_IDX)] += w.q_other
        return QuadraticCost(Q, c)

    def cost(self, player, z1, z2):
        return self._costs[player].value(np.concatenate([z1, z2]))

    def cost_grad(self, player, z1, z2):
        g = self._costs[player].gradient(np.concatenate([z1, z2]))
        d1 = self.size(1)
        return g[:d1], g[d1:]

    def cost_hess(self, player, z1, z2):
        return self._costs[player].hessian()

    # --- dynamics -------------------------------------------------------------
    def step(self, player, X, U):
        return kernels.step(X, U, self.dt, self.track.kappa, self.vehicle.lf, self.vehicle.lr)

    def step_jac(self, player, X, U):
        return kernels.step_jac(X, U, self.dt, self.track.kappa, self.vehicle.lf, self.vehicle.lr)

    def step_curvature(self, player, X, U, W):
        return kernels.step_curvature(X, U, W, self.dt, self.track.kappa,
                                      self.vehicle.lf, self.vehicle.lr)

    def rollout(self, player, x0, U):
        return kernels.rollout(x0, U, self.dt, self.track.kappa, self.vehicle.lf, self.vehicle.lr)

    # --- bounds ---------------------------------------------------------------
    def state_bounds(self, player):
        return self.bounds.x_lower, self.bounds.x_upper

    def input_bounds(self, player):
        return self.bounds.u_lower, self.bounds.u_upper

    # --- collision constraint -----------------------------------------------------
    def n_ineq(self, player):
        return self.N + 1

    def _st(self, z1, z2):
        z = np.concatenate([z1, z2])
        return (z[self._s_cols[0]], z[self._t_cols[0]], z[self._s_cols[1]], z[self._t_cols[1]])

    def ineq(self, player, z1, z2):
        s1, t1, s2, t2 = self._st(z1, z2)
        X1, Y1 = frenet_to_cartesian(s1, t1, self.track)
        X2, Y2 = frenet_to_cartesian(s2, t2, self.track)
        return self.bounds.d_safe**2 - ((X1 - X2) ** 2 + (Y1 - Y2) ** 2)

    def _pair_geometry(self, z1, z2):
        s1, t1, s2, t2 = self._st(z1, z2)
        X1, Y1 = frenet_to_cartesian(s1, t1, self.track)
        X2, Y2 = frenet_to_cartesian(s2, t2, self.track)
        dX, dY = X1 - X2, Y1 - Y2
        # Jacobian of (dX, dY) w.r.t. (s1, t1, s2, t2), shape (K, 2, 4)
        J = np.empty((s1.size, 2, 4))
        a = cartesian_jacobian(s1, t1, self.track)
        b = cartesian_jacobian(s2, t2, self.track)
        J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1] = a
        J[:, 0, 2], J[:, 0, 3], J[:, 1, 2], J[:, 1, 3] = (-b[0], -b[1], -b[2], -b[3])
        return (s1, t1, s2, t2), np.stack([dX, dY], axis=1), J

    def ineq_jac(self, player, z1, z2):
        _, delta, J = self._pair_geometry(z1, z2)
        grad = -2.0 * np.einsum("kc,kcj->kj", delta, J)
        K = delta.shape[0]
        out = np.zeros((K, self.size(1) + self.size(2)))
        rows = np.arange(K)
        out[rows, self._s_cols[0]] = grad[:, 0]
        out[rows, self._t_cols[0]] = grad[:, 1]
        out[rows, self._s_cols[1]] = grad[:, 2]
        out[rows, self._t_cols[1]] = grad[:, 3]
        return out

    def collision_hessians(self, z1, z2) -> np.ndarray:
        """Per-step Hessians ``(K, 4, 4)`` of ``g_k`` w.r.t. ``(s1, t1, s2, t2)``."""
        (s1, t1, s2, t2), delta, J = self._pair_geometry(z1, z2)
        R = self.track.R
        H = -2.0 * np.einsum("kci,kcj->kij", J, J)
        for sign, (s, t), base in ((1.0, (s1, t1), 0), (-1.0, (s2, t2), 2)):
            th = s / R
            st, ct = np.sin(th), np.cos(th)
            # second derivatives of X and Y in (s, t)
            Xss, Xst = -(R - t) * st / R**2, -ct / R
            Yss, Yst = (R - t) * ct / R**2, -st / R
            cX = -2.0 * sign * delta[:, 0]
            cY = -2.0 * sign * delta[:, 1]
            H[:, base, base] += cX * Xss + cY * Yss
            H[:, base, base + 1] += cX * Xst + cY * Yst
            H[:, base + 1, base] += cX * Xst + cY * Yst
        return H

    def ineq_curvature(self, player, z1, z2, w):
        Hk = self.collision_hessians(z1, z2)
        D = self.size(1) + self.size(2)
        out = np.zeros((D, D))
        w = np.asarray(w, float)
        for k in range(Hk.shape[0]):
            if w[k] == 0.0:
                continue
            idx = np.array([self._s_cols[0][k], self._t_cols[0][k],
                            self._s_cols[1][k], self._t_cols[1][k]])
            out[np.ix_(idx, idx)] += w[k] * Hk[k]
        return out

    # --- helpers ----------------------------------------------------------------
    def positions(self, player: int, X) -> np.ndarray:
        X = np.asarray(X, float)
        px, py = frenet_to_cartesian(X[:, S_IDX], X[:, T_IDX], self.track)
        return np.stack([px, py], axis=-1)

    def proximity(self) -> float:
        p1 = np.array(frenet_to_cartesian(self.x0[0][S_IDX], self.x0[0][T_IDX], self.track))
        p2 = np.array(frenet_to_cartesian(self.x0[1][S_IDX], self.x0[1][T_IDX], self.track))
        return float(math.hypot(*(p1 - p2)))


def default_racing_params(**overrides) -> RacingParams:
    base = RacingParams()
    if "track" in overrides and "bounds" not in overrides:
        overrides["bounds"] = Bounds.for_track(overrides["track"])
    return replace(base, **overrides)
