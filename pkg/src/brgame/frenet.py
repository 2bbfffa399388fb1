"""Kinematic bicycle model on a constant-curvature track in Frenet coordinates.

States are ``(v, psi, s, t)``: speed, heading relative to the track tangent,
progress along the centerline and lateral offset (positive towards the
center of curvature).  Inputs are ``(a, delta)``: longitudinal acceleration
and steering angle.  The track centerline is a quarter circle of radius ``R``
starting at the origin and centered at ``(0, R)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from brgame import kernels
from brgame.errors import DomainError, SingularityError

STATE_DIM = 4
INPUT_DIM = 2


class FrenetState(NamedTuple):
    v: float
    psi: float
    s: float
    t: float


class ControlInput(NamedTuple):
    a: float
    delta: float


@dataclass(frozen=True)
class TrackParams:
    R: float = 3.5

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("track radius must be positive")

    @property
    def kappa(self) -> float:
        return 1.0 / self.R

    @property
    def s_max(self) -> float:
        return self.R * math.pi / 2.0


@dataclass(frozen=True)
class VehicleParams:
    lf: float = 0.13
    lr: float = 0.13

    def __post_init__(self):
        if not (self.lf > 0 and self.lr > 0):
            raise ValueError("axle distances must be positive")

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr


@dataclass(frozen=True)
class Bounds:
    """Box bounds on states/inputs and the pairwise safety distance."""

    state_lower: tuple = (0.0, -math.pi, 0.0, -0.5)
    state_upper: tuple = (2.0, math.pi, 3.5 * math.pi / 2.0, 0.5)
    input_lower: tuple = (-2.0, -math.radians(25.0))
    input_upper: tuple = (2.0, math.radians(25.0))
    d_safe: float = 0.25

    def __post_init__(self):
        lo = np.r_[self.state_lower, self.input_lower]
        hi = np.r_[self.state_upper, self.input_upper]
        if lo.shape != (6,) or hi.shape != (6,):
            raise ValueError("bounds must have 4 state and 2 input entries")
        if np.any(lo >= hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if not self.d_safe >= 0:
            raise ValueError("d_safe must be nonnegative")

    @classmethod
    def for_track(cls, track: TrackParams, **overrides) -> "Bounds":
        upper = (2.0, math.pi, track.s_max, 0.5)
        return cls(state_upper=overrides.pop("state_upper", upper), **overrides)

    @property
    def x_lower(self) -> np.ndarray:
        return np.asarray(self.state_lower, dtype=float)

    @property
    def x_upper(self) -> np.ndarray:
        return np.asarray(self.state_upper, dtype=float)

    @property
    def u_lower(self) -> np.ndarray:
        return np.asarray(self.input_lower, dtype=float)

    @property
    def u_upper(self) -> np.ndarray:
        return np.asarray(self.input_upper, dtype=float)


def slip_angle(delta, vp: VehicleParams):
    """Body slip angle ``beta = arctan(lf / (lf + lr) * tan(delta))``."""
    d = np.asarray(delta, dtype=float)
    if np.any(np.abs(d) >= math.pi / 2):
        raise DomainError("steering angle must satisfy |delta| < pi/2")
    beta = np.arctan(vp.lf / vp.wheelbase * np.tan(d))
    return float(beta) if beta.ndim == 0 else beta


def _check_den(t, tp: TrackParams):
    if np.any(1.0 - tp.kappa * np.asarray(t, dtype=float) <= 0.0):
        raise SingularityError("1 - kappa * t must stay positive")


def frenet_derivative(x, u, tp: TrackParams, vp: VehicleParams) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(1, STATE_DIM)
    u = np.asarray(u, dtype=float).reshape(1, INPUT_DIM)
    _check_den(x[0, 3], tp)
    return kernels.derivative(x, u, tp.kappa, vp.lf, vp.lr)[0]


def euler_step(x, u, dt: float, tp: TrackParams, vp: VehicleParams) -> np.ndarray:
    """One forward-Euler step; the heading is wrapped to ``[-pi, pi]``."""
    x = np.asarray(x, dtype=float).reshape(1, STATE_DIM)
    u = np.asarray(u, dtype=float).reshape(1, INPUT_DIM)
    _check_den(x[0, 3], tp)
    return kernels.step(x, u, dt, tp.kappa, vp.lf, vp.lr)[0]


def euler_step_jacobian(x, u, dt: float, tp: TrackParams, vp: VehicleParams):
    """Return ``(A, B)``, the derivatives of :func:`euler_step` w.r.t. state and input."""
    x = np.asarray(x, dtype=float).reshape(1, STATE_DIM)
    u = np.asarray(u, dtype=float).reshape(1, INPUT_DIM)
    _check_den(x[0, 3], tp)
    _, A, B = kernels.step_jac(x, u, dt, tp.kappa, vp.lf, vp.lr)
    return A[0], B[0]


def frenet_derivative_jacobian(x, u, tp: TrackParams, vp: VehicleParams):
    """Continuous-time Jacobians, recovered from a unit Euler step."""
    A, B = euler_step_jacobian(x, u, 1.0, tp, vp)
    return A - np.eye(STATE_DIM), B


def frenet_to_cartesian(s, t, tp: TrackParams):
    theta = np.asarray(s, dtype=float) / tp.R
    X = tp.R * np.sin(theta) - t * np.sin(theta)
    Y = tp.R * (1.0 - np.cos(theta)) + t * np.cos(theta)
    if np.ndim(X) == 0:
        return float(X), float(Y)
    return X, Y


def cartesian_jacobian(s, t, tp: TrackParams):
    """Derivatives ``(dX/ds, dX/dt, dY/ds, dY/dt)`` of :func:`frenet_to_cartesian`."""
    theta = np.asarray(s, dtype=float) / tp.R
    st, ct = np.sin(theta), np.cos(theta)
    scale = (tp.R - np.asarray(t, dtype=float)) / tp.R
    return scale * ct, -st, scale * st, ct


def positions(X, tp: TrackParams) -> np.ndarray:
    """Cartesian positions ``(K, 2)`` of a state sequence ``(K, 4)``."""
    X = np.asarray(X, dtype=float)
    px, py = frenet_to_cartesian(X[:, 2], X[:, 3], tp)
    return np.stack([px, py], axis=-1)


def collision_margin(x1, x2, tp: TrackParams, bounds: Bounds):
    """Return ``(|p1 - p2| - d_safe, |p1 - p2|^2 - d_safe^2)``; both >= 0 iff safe."""
    p1 = np.array(frenet_to_cartesian(x1[2], x1[3], tp))
    p2 = np.array(frenet_to_cartesian(x2[2], x2[3], tp))
    sq = float(np.sum((p1 - p2) ** 2))
    return math.sqrt(sq) - bounds.d_safe, sq - bounds.d_safe**2
