"""Learned best response for Player 2: MLP, squashing and dynamics rollout.

The network maps features ``phi = [x2_0, vec(X1)]`` (standardized with
stored mean/std) through tanh hidden layers and a linear output to raw
controls, which are squashed into the input box and rolled out through the
bicycle model.  Outputs therefore satisfy the dynamics exactly and the input
bounds strictly, for any parameters.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from brgame import kernels
from brgame.equilibrium import BestResponseOperator
from brgame.errors import ContractError
from brgame.game import Trajectory

STATE_DIM = 4
INPUT_DIM = 2
# beyond this |raw| float64 tanh rounds to +-1, which would touch the bounds
RAW_CLIP = 18.0
MAGIC = b"BRSURR01"


@dataclass(frozen=True)
class SquashSpec:
    mid: np.ndarray
    half: np.ndarray

    @classmethod
    def from_bounds(cls, lower, upper) -> "SquashSpec":
        lo = np.asarray(lower, float)
        hi = np.asarray(upper, float)
        if np.any(lo >= hi):
            raise ValueError("squashing needs lower < upper")
        return cls(mid=(lo + hi) / 2.0, half=(hi - lo) / 2.0)

    @property
    def lower(self) -> np.ndarray:
        return self.mid - self.half

    @property
    def upper(self) -> np.ndarray:
        return self.mid + self.half


@dataclass(frozen=True)
class RolloutBinding:
    """Player-2 dynamics used to roll out predicted controls."""

    dt: float = 0.05
    R: float = 3.5
    lf: float = 0.13
    lr: float = 0.13

    @property
    def kappa(self) -> float:
        return 1.0 / self.R


@dataclass
class SurrogateParams:
    weights: list
    biases: list
    squash: SquashSpec
    N: int
    feat_mean: np.ndarray
    feat_std: np.ndarray
    binding: RolloutBinding = field(default_factory=RolloutBinding)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ContractError(f"layer {l} has inconsistent shapes")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ContractError(f"layer {l} input width does not match")
        if self.widths[0] != feature_dim(self.N) or self.widths[-1] != INPUT_DIM * self.N:
            raise ContractError("network widths do not match the horizon")
        if self.feat_mean.shape != (self.widths[0],) or self.feat_std.shape != (self.widths[0],):
            raise ContractError("normalization vectors have the wrong length")
        if np.any(self.feat_std <= 0):
            raise ContractError("feature std must be positive")

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self) -> "SurrogateParams":
        return SurrogateParams([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                               self.squash, self.N, self.feat_mean.copy(), self.feat_std.copy(),
                               self.binding)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def feature_dim(N: int) -> int:
    return STATE_DIM + STATE_DIM * (N + 1)


def init_params(N: int, hidden=(128, 128, 64), bounds=None, seed: int = 0,
                binding: RolloutBinding | None = None, feat_mean=None, feat_std=None) -> SurrogateParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    widths = [feature_dim(N), *hidden, INPUT_DIM * N]
    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    if bounds is None:
        bounds = ((-2.0, -np.radians(25.0)), (2.0, np.radians(25.0)))
    d = widths[0]
    return SurrogateParams(
        Ws, bs, SquashSpec.from_bounds(*bounds), N,
        np.zeros(d) if feat_mean is None else np.asarray(feat_mean, float),
        np.ones(d) if feat_std is None else np.asarray(feat_std, float),
        binding or RolloutBinding(),
    )


def zero_params(N: int, hidden=(128, 128, 64), bounds=None) -> SurrogateParams:
    p = init_params(N, hidden, bounds)
    for W, b in zip(p.weights, p.biases):
        W[...] = 0.0
        b[...] = 0.0
    return p


def featurize(x2_0, X1) -> np.ndarray:
    """``[x2_0, vec(X1)]``; batched when ``x2_0`` is ``(B, 4)`` and ``X1`` is ``(B, N+1, 4)``."""
    x2_0 = np.asarray(x2_0, float)
    X1 = np.asarray(X1, float)
    if x2_0.ndim == 1:
        if x2_0.shape != (STATE_DIM,) or X1.ndim != 2 or X1.shape[1] != STATE_DIM:
            raise ContractError("featurize expects a 4-vector and an (N+1, 4) sequence")
        return np.concatenate([x2_0, X1.ravel()])
    if X1.ndim != 3 or X1.shape[0] != x2_0.shape[0] or X1.shape[2] != STATE_DIM:
        raise ContractError("batched featurize expects (B, 4) and (B, N+1, 4)")
    return np.concatenate([x2_0, X1.reshape(X1.shape[0], -1)], axis=1)


def _forward(p: SurrogateParams, phi):
    """Return raw outputs ``(B, 2N)`` and the hidden activations for backprop."""
    a = (phi - p.feat_mean) / p.feat_std
    acts = [a]
    for W, b in zip(p.weights[:-1], p.biases[:-1]):
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    raw = a @ p.weights[-1].T + p.biases[-1]
    return raw, acts


def mlp_forward(p: SurrogateParams, phi) -> np.ndarray:
    """Raw network outputs, shape ``(N, 2)`` (or ``(B, N, 2)`` for a batch)."""
    phi = np.asarray(phi, float)
    single = phi.ndim == 1
    phi2 = phi[None, :] if single else phi
    if phi2.shape[1] != p.widths[0]:
        raise ContractError(f"feature length {phi2.shape[1]} does not match input width {p.widths[0]}")
    raw, _ = _forward(p, phi2)
    raw = raw.reshape(raw.shape[0], p.N, INPUT_DIM)
    return raw[0] if single else raw


def squash(raw, spec: SquashSpec) -> np.ndarray:
    """``m + h tanh(raw)`` per channel, strictly inside ``(lower, upper)``."""
    t = np.tanh(np.clip(np.asarray(raw, float), -RAW_CLIP, RAW_CLIP))
    u = spec.mid + spec.half * t
    # guard against rounding onto the bound when the midpoint is nonzero
    return np.clip(u, np.nextafter(spec.lower, np.inf), np.nextafter(spec.upper, -np.inf))


def squash_derivative(raw, spec: SquashSpec) -> np.ndarray:
    raw = np.asarray(raw, float)
    t = np.tanh(np.clip(raw, -RAW_CLIP, RAW_CLIP))
    d = spec.half * (1.0 - t * t)
    return np.where(np.abs(raw) > RAW_CLIP, 0.0, d)


def _rollout(binding: RolloutBinding, x0, U):
    """Batched rollout; returns states ``(B, N+1, 4)``."""
    B, N, _ = U.shape
    X = np.empty((B, N + 1, STATE_DIM))
    X[:, 0] = x0
    for k in range(N):
        X[:, k + 1] = kernels.step(X[:, k], U[:, k], binding.dt, binding.kappa, binding.lf, binding.lr)
    return X


def predict_batch(p: SurrogateParams, x2_0, X1):
    """Predicted ``(X2, U2)`` for a batch."""
    phi = featurize(x2_0, X1)
    U = squash(mlp_forward(p, phi), p.squash)
    return _rollout(p.binding, np.asarray(x2_0, float), U), U


def surrogate_rollout(p: SurrogateParams, x2_0, X1) -> Trajectory:
    X1 = np.asarray(X1, float)
    if X1.shape != (p.N + 1, STATE_DIM):
        raise ContractError(f"X1 must have shape {(p.N + 1, STATE_DIM)}")
    U = squash(mlp_forward(p, featurize(x2_0, X1)), p.squash)
    b = p.binding
    X = kernels.rollout(np.asarray(x2_0, float), U, b.dt, b.kappa, b.lf, b.lr)
    return Trajectory(X, U)


def network_jacobian(p: SurrogateParams, phi) -> np.ndarray:
    """``d raw / d phi``, shape ``(2N, d_in)``, including the standardization."""
    raw, acts = _forward(p, np.asarray(phi, float)[None, :])
    J = p.weights[-1]
    for l in range(len(p.weights) - 2, -1, -1):
        J = (J * (1.0 - acts[l + 1][0] ** 2)) @ p.weights[l]
    return J / p.feat_std


def surrogate_jacobian(p: SurrogateParams, x2_0, X1) -> np.ndarray:
    """``d flat(Z2_hat) / d vec(X1)`` with ``flat = [X2 (N+1)x4, U2 Nx2]``."""
    X1 = np.asarray(X1, float)
    phi = featurize(x2_0, X1)
    N = p.N
    npar = STATE_DIM * (N + 1)
    raw, _ = _forward(p, phi[None, :])
    raw = raw[0]
    dU = (squash_derivative(raw.reshape(N, INPUT_DIM), p.squash).ravel()[:, None]
          * network_jacobian(p, phi)[:, STATE_DIM:])
    U = squash(raw.reshape(N, INPUT_DIM), p.squash)
    b = p.binding
    X = kernels.rollout(np.asarray(x2_0, float), U, b.dt, b.kappa, b.lf, b.lr)
    _, A, Bm = kernels.step_jac(X[:-1], U, b.dt, b.kappa, b.lf, b.lr)
    out = np.zeros((STATE_DIM * (N + 1) + INPUT_DIM * N, npar))
    S = np.zeros((STATE_DIM, npar))
    for k in range(N):
        S = A[k] @ S + Bm[k] @ dU[2 * k:2 * k + 2]
        out[STATE_DIM * (k + 1):STATE_DIM * (k + 2)] = S
    out[STATE_DIM * (N + 1):] = dU
    return out


class LearnedBestResponse(BestResponseOperator):
    provenance = "Learned"

    def __init__(self, params: SurrogateParams):
        self.params = params

    def evaluate(self, X1, x2_0) -> Trajectory:
        return surrogate_rollout(self.params, x2_0, X1)

    def jacobian(self, X1, x2_0) -> np.ndarray:
        return surrogate_jacobian(self.params, x2_0, X1)


# ----------------------------------------------------------------------------
# parameter file: MAGIC | uint32 header length | JSON header | float64 payload
# ----------------------------------------------------------------------------

def params_to_bytes(p: SurrogateParams) -> bytes:
    header = {
        "format": 1,
        "widths": p.widths,
        "activation": "tanh",
        "N": p.N,
        "binding": {"dt": p.binding.dt, "R": p.binding.R, "lf": p.binding.lf, "lr": p.binding.lr},
        "layout": "W1,b1,...,WL,bL,feat_mean,feat_std,squash_mid,squash_half",
        "byte_order": "little",
    }
    hb = json.dumps(header, sort_keys=True).encode()
    arrays = [a for pair in zip(p.weights, p.biases) for a in pair]
    arrays += [p.feat_mean, p.feat_std, p.squash.mid, p.squash.half]
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def params_from_bytes(data: bytes) -> SurrogateParams:
    if data[:len(MAGIC)] != MAGIC:
        raise ContractError("not a surrogate parameter file")
    off = len(MAGIC)
    (hl,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    header = json.loads(data[off:off + hl].decode())
    off += hl
    payload = np.frombuffer(data[off:], dtype="<f8").astype(float)
    widths = header["widths"]
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > payload.size:
            raise ContractError("parameter file is truncated")
        a = payload[pos:pos + n].reshape(shape).copy()
        pos += n
        return a

    Ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        Ws.append(take(fan_out, fan_in))
        bs.append(take(fan_out))
    mean, std = take(widths[0]), take(widths[0])
    mid, half = take(INPUT_DIM), take(INPUT_DIM)
    if pos != payload.size:
        raise ContractError("parameter file has trailing data")
    return SurrogateParams(Ws, bs, SquashSpec(mid, half), int(header["N"]), mean, std,
                           RolloutBinding(**header["binding"]))


def save_params(p: SurrogateParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(p))


def load_params(path) -> SurrogateParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
