"""One-step, two-player scalar game with a closed-form solution.

Each player moves a scalar position with a one-step velocity,
``x_i^+ = x_i + dt * v_i``, and pays for distance to its goal, for its own
effort, and for deviation of the gap ``e_c = (x_1^+ - x_2^+) - d``::

    J_i = 0.5 q_i (x_i^+ - g_i)^2 + 0.5 r_i v_i^2 + 0.5 w e_c^2

With ``dt = 1, q = r = 1, w = 2, d = 0.5, x = 0, g = (1, -1)`` the Nash
equilibrium is ``(1/3, -1/3)`` and Player 2's best response is
``v_2 = (v_1 - 1) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from brgame.equilibrium import BestResponseOperator
from brgame.game import GameSpec, QuadraticCost, Trajectory


@dataclass(frozen=True)
class ToyParams:
    dt: float = 1.0
    q1: float = 1.0
    q2: float = 1.0
    r1: float = 1.0
    r2: float = 1.0
    w: float = 2.0
    d: float = 0.5
    x1: float = 0.0
    x2: float = 0.0
    g1: float = 1.0
    g2: float = -1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if min(self.q1, self.q2, self.r1, self.r2, self.w) < 0:
            raise ValueError("weights must be nonnegative")

    @property
    def y(self) -> float:
        return (self.x1 - self.x2) - self.d


class ToyGame(GameSpec):
    """The scalar game above as a :class:`GameSpec` with ``N = 1``.

    Flat layout per player: ``[x_0, x_1, v]``.
    """

    state_dims = (1, 1)
    input_dims = (1, 1)
    angle_dims = ((), ())

    def __init__(self, params: ToyParams | None = None):
        self.params = params or ToyParams()
        self.N = 1
        self.dt = self.params.dt
        self.x0 = (np.array([self.params.x1]), np.array([self.params.x2]))
        self._costs = {1: self._build_cost(1), 2: self._build_cost(2)}

    def _build_cost(self, player: int) -> QuadraticCost:
        p = self.params
        q, r, g = (p.q1, p.r1, p.g1) if player == 1 else (p.q2, p.r2, p.g2)
        own_next = 1 if player == 1 else 4
        own_v = 2 if player == 1 else 5
        Q = np.zeros((6, 6))
        c = np.zeros(6)
        Q[own_next, own_next] += q
        c[own_next] -= q * g
        Q[own_v, own_v] += r
        # gap term 0.5 w ((x1+ - x2+) - d)^2
        a = np.zeros(6)
        a[1], a[4] = 1.0, -1.0
        Q += p.w * np.outer(a, a)
        c -= p.w * p.d * a
        const = 0.5 * q * g * g + 0.5 * p.w * p.d * p.d
        return QuadraticCost(Q, c, const)

    def with_initial_states(self, x1_0, x2_0) -> "ToyGame":
        return ToyGame(replace(self.params, x1=float(np.ravel(x1_0)[0]), x2=float(np.ravel(x2_0)[0])))

    def step(self, player, X, U):
        return np.asarray(X, float) + self.dt * np.asarray(U, float)

    def step_jac(self, player, X, U):
        X = np.asarray(X, float)
        K = X.shape[0]
        A = np.ones((K, 1, 1))
        B = np.full((K, 1, 1), self.dt)
        return self.step(player, X, U), A, B

    def step_curvature(self, player, X, U, W):
        return np.zeros((np.asarray(X).shape[0], 2, 2))

    def cost(self, player, z1, z2):
        return self._costs[player].value(np.concatenate([z1, z2]))

    def cost_grad(self, player, z1, z2):
        g = self._costs[player].gradient(np.concatenate([z1, z2]))
        return g[:3], g[3:]

    def cost_hess(self, player, z1, z2):
        return self._costs[player].hessian()


def toy_br2(v1: float, params: ToyParams | None = None) -> float:
    """Player 2's best-response velocity to Player 1's velocity ``v1``."""
    p = params or ToyParams()
    x1_next = p.x1 + p.dt * v1
    num = -p.q2 * p.dt * (p.x2 - p.g2) + p.w * p.dt * (x1_next - p.x2 - p.d)
    return num / (p.q2 * p.dt**2 + p.r2 + p.w * p.dt**2)


def toy_br1(v2: float, params: ToyParams | None = None) -> float:
    """Player 1's best-response velocity to Player 2's velocity ``v2``."""
    p = params or ToyParams()
    x2_next = p.x2 + p.dt * v2
    num = -p.q1 * p.dt * (p.x1 - p.g1) - p.w * p.dt * (p.x1 - x2_next - p.d)
    return num / (p.q1 * p.dt**2 + p.r1 + p.w * p.dt**2)


def toy_linear_system(params: ToyParams | None = None):
    """The stacked first-order conditions as ``(M, b)`` with ``M @ (v1, v2) = b``."""
    p = params or ToyParams()
    dt2 = p.dt**2
    M = np.array([
        [p.q1 * dt2 + p.r1 + p.w * dt2, -p.w * dt2],
        [-p.w * dt2, p.q2 * dt2 + p.r2 + p.w * dt2],
    ])
    b = np.array([
        -p.q1 * p.dt * (p.x1 - p.g1) - p.w * p.dt * p.y,
        -p.q2 * p.dt * (p.x2 - p.g2) + p.w * p.dt * p.y,
    ])
    return M, b


def toy_joint_solve(params: ToyParams | None = None):
    """Solve both players' stationarity conditions jointly; returns ``(v1, v2)``."""
    M, b = toy_linear_system(params)
    v = np.linalg.solve(M, b)
    return float(v[0]), float(v[1])


class ToyBestResponse(BestResponseOperator):
    """Closed-form ``B_2`` for :class:`ToyGame`, built from a velocity map.

    ``br_map(v1, params)`` defaults to :func:`toy_br2`; the map is affine, so
    its slope is taken from a unit difference.
    """

    provenance = "ClosedForm"

    def __init__(self, game: ToyGame, br_map=None):
        self.game = game
        self.br_map = br_map or toy_br2

    def _params(self, X1, x2_0):
        p = self.game.params
        x2 = p.x2 if x2_0 is None else float(np.ravel(x2_0)[0])
        return replace(p, x1=float(np.ravel(X1)[0]), x2=x2)

    def evaluate(self, X1, x2_0=None) -> Trajectory:
        X1 = np.asarray(X1, float).reshape(2, 1)
        p = self._params(X1, x2_0)
        v1 = (X1[1, 0] - X1[0, 0]) / p.dt
        v2 = self.br_map(v1, p)
        return Trajectory(np.array([[p.x2], [p.x2 + p.dt * v2]]), np.array([[v2]]))

    def jacobian(self, X1, x2_0=None) -> np.ndarray:
        X1 = np.asarray(X1, float).reshape(2, 1)
        p = self._params(X1, x2_0)
        v1 = (X1[1, 0] - X1[0, 0]) / p.dt
        slope = self.br_map(v1 + 1.0, p) - self.br_map(v1, p)
        # x1_0 enters both v1 and the map's own x1 parameter
        shift = self.br_map(v1, replace(p, x1=p.x1 + 1.0)) - self.br_map(v1, p)
        dv2 = np.array([-slope / p.dt + shift, slope / p.dt])
        return np.vstack([np.zeros(2), p.dt * dv2, dv2])
