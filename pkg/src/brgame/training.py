"""Rollout-aware training of the best-response surrogate.

Per sample the loss is::

    lam_u sum_{k<N}  g^k |u_hat_k - u_k|^2
  + lam_x sum_{k<=N} g^k |x_hat_k - x_k|^2
  + lam_g sum_{k<=N} relu(d_safe^2 - |p1_k - p_hat2_k|^2)^2

averaged over the batch.  Gradients are backpropagated in closed form through
the Cartesian map, the Euler rollout (adjoint recursion), the squashing and
the MLP.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from brgame import kernels
from brgame.dataset import BRArrays
from brgame.errors import ContractError, TrainingError
from brgame.surrogate import (
    INPUT_DIM,
    STATE_DIM,
    RolloutBinding,
    SurrogateParams,
    _forward,
    featurize,
    init_params,
    squash,
    squash_derivative,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 150
    grad_clip: float = 5.0
    gamma: float = 0.92
    lam_u: float = 30.0
    lam_x: float = 150.0
    lam_g: float = 50.0
    d_safe: float = 0.25
    train_frac: float = 0.8
    seed: int = 0
    hidden: tuple = (128, 128, 64)

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "grad_clip", "gamma"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        for name in ("weight_decay", "lam_u", "lam_x", "lam_g", "d_safe"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if not 0.0 < self.train_frac < 1.0:
            raise ContractError("train_frac must lie in (0, 1)")
        if not self.hidden or min(self.hidden) < 1:
            raise ContractError("hidden widths must be positive")

    @property
    def val_frac(self) -> float:
        return 1.0 - self.train_frac

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# ----------------------------------------------------------------------------
# loss and gradient
# ----------------------------------------------------------------------------

def _positions(X, R):
    theta = X[..., 2] / R
    st, ct = np.sin(theta), np.cos(theta)
    t = X[..., 3]
    return np.stack([(R - t) * st, R * (1.0 - ct) + t * ct], axis=-1)


def _position_jac(X, R):
    """``dp/ds`` and ``dp/dt``, each ``(..., 2)``."""
    theta = X[..., 2] / R
    st, ct = np.sin(theta), np.cos(theta)
    scale = (R - X[..., 3]) / R
    return np.stack([scale * ct, scale * st], axis=-1), np.stack([-st, ct], axis=-1)


def _weights(gamma, n):
    return gamma ** np.arange(n)


def br_loss_and_grad(p: SurrogateParams, data: BRArrays, cfg: TrainingConfig, need_grad: bool = True):
    """Return ``(loss, grads)``; ``grads`` is ``[(dW, db), ...]`` or ``None``."""
    if len(data) == 0:
        raise ContractError("batch must be nonempty")
    b: RolloutBinding = p.binding
    N = p.N
    if data.N != N:
        raise ContractError(f"dataset horizon {data.N} does not match surrogate horizon {N}")
    B = len(data)
    phi = featurize(data.x2_0, data.X1)
    raw_flat, acts = _forward(p, phi)
    raw = raw_flat.reshape(B, N, INPUT_DIM)
    U = squash(raw, p.squash)

    # rollout, keeping the step Jacobians for the adjoint pass
    X = np.empty((B, N + 1, STATE_DIM))
    X[:, 0] = data.x2_0
    A = np.empty((N, B, STATE_DIM, STATE_DIM))
    Bm = np.empty((N, B, STATE_DIM, INPUT_DIM))
    for k in range(N):
        X[:, k + 1], A[k], Bm[k] = kernels.step_jac(X[:, k], U[:, k], b.dt, b.kappa, b.lf, b.lr)

    wu = _weights(cfg.gamma, N)
    wx = _weights(cfg.gamma, N + 1)
    du = U - data.U2
    dx = X - data.X2
    p1 = _positions(data.X1, b.R)
    p2 = _positions(X, b.R)
    diff = p1 - p2
    viol = np.maximum(0.0, cfg.d_safe**2 - np.sum(diff * diff, axis=-1))

    per = (cfg.lam_u * np.einsum("k,bkd->b", wu, du * du)
           + cfg.lam_x * np.einsum("k,bkd->b", wx, dx * dx)
           + cfg.lam_g * np.sum(viol * viol, axis=1))
    loss = float(np.mean(per))
    if not need_grad:
        return loss, None

    # d loss / d X_k and d loss / d U_k
    gX = (2.0 * cfg.lam_x / B) * wx[None, :, None] * dx
    gp2 = (4.0 * cfg.lam_g / B) * viol[..., None] * diff
    dps, dpt = _position_jac(X, b.R)
    gX[..., 2] += np.sum(gp2 * dps, axis=-1)
    gX[..., 3] += np.sum(gp2 * dpt, axis=-1)
    gU = (2.0 * cfg.lam_u / B) * wu[None, :, None] * du
    adj = gX[:, N]
    for k in range(N - 1, -1, -1):
        gU[:, k] += np.einsum("bij,bi->bj", Bm[k], adj)
        adj = gX[:, k] + np.einsum("bij,bi->bj", A[k], adj)

    delta = (gU * squash_derivative(raw, p.squash)).reshape(B, N * INPUT_DIM)
    grads = [None] * len(p.weights)
    for l in range(len(p.weights) - 1, -1, -1):
        grads[l] = (delta.T @ acts[l], delta.sum(axis=0))
        if l:
            delta = (delta @ p.weights[l]) * (1.0 - acts[l] ** 2)
    return loss, grads


def br_loss(p: SurrogateParams, data: BRArrays, cfg: TrainingConfig) -> float:
    return br_loss_and_grad(p, data, cfg, need_grad=False)[0]


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay applied to weight matrices only."""

    def __init__(self, params: SurrogateParams, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        shapes = [a.shape for pair in zip(params.weights, params.biases) for a in pair]
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: SurrogateParams, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        i = 0
        for l, (gW, gb) in enumerate(grads):
            for arr, g, decay in ((params.weights[l], gW, True), (params.biases[l], gb, False)):
                if decay:
                    arr *= 1.0 - self.lr * self.wd
                self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
                self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
                arr -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
                i += 1


def clip_grads(grads, max_norm):
    """Scale gradients in place to a global norm of at most ``max_norm``; returns the norm."""
    norm = float(np.sqrt(sum(np.sum(gW * gW) + np.sum(gb * gb) for gW, gb in grads)))
    if norm > max_norm:
        s = max_norm / (norm + 1e-6)
        for gW, gb in grads:
            gW *= s
            gb *= s
    return norm


# ----------------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------------

def split_indices(M: int, cfg: TrainingConfig):
    """Seeded permutation split into ``(train, val)`` index arrays."""
    if M < 2:
        raise ContractError("need at least two samples to split")
    perm = np.random.default_rng(cfg.seed).permutation(M)
    n_train = min(max(1, int(round(cfg.train_frac * M))), M - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def feature_stats(data: BRArrays):
    phi = featurize(data.x2_0, data.X1)
    mean = phi.mean(axis=0)
    std = phi.std(axis=0)
    # constant features are left unscaled
    std = np.where(std > 1e-8, std, 1.0)
    return mean, std


@dataclass
class TrainingResult:
    params: SurrogateParams
    best_epoch: int
    best_val_loss: float
    initial_val_loss: float
    history: list = field(default_factory=list)
    wall_time: float = 0.0


def train(data: BRArrays, cfg: TrainingConfig, bounds=None, binding: RolloutBinding | None = None,
          val: BRArrays | None = None, init: SurrogateParams | None = None) -> TrainingResult:
    """Mini-batch AdamW on :func:`br_loss`; returns the best-validation checkpoint.

    Without ``val`` the data are split per ``cfg``.  ``history`` holds one
    ``(epoch, train_loss, val_loss)`` tuple per epoch, epoch 0 being the
    initialization.
    """
    t0 = time.perf_counter()
    if val is None:
        tr_idx, va_idx = split_indices(len(data), cfg)
        train_set, val = data.subset(tr_idx), data.subset(va_idx)
    else:
        train_set = data
    if init is None:
        mean, std = feature_stats(train_set)
        p = init_params(train_set.N, cfg.hidden, bounds, seed=cfg.seed, binding=binding,
                        feat_mean=mean, feat_std=std)
    else:
        p = init.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    opt = AdamW(p, cfg.lr, cfg.weight_decay)

    best = p.copy()
    best_val = initial_val = br_loss(p, val, cfg)
    best_epoch = 0
    history = [(0, br_loss(p, train_set, cfg), initial_val)]
    M = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(M)
        total = 0.0
        for start in range(0, M, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = br_loss_and_grad(p, train_set.subset(idx), cfg)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            clip_grads(grads, cfg.grad_clip)
            opt.step(p, grads)
            total += loss * len(idx)
        v = br_loss(p, val, cfg)
        if not np.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, total / M, v))
        if v < best_val:
            best_val, best, best_epoch = v, p.copy(), epoch
        if epoch % 10 == 0 or epoch == cfg.epochs:
            log.info("epoch %d train %.5g val %.5g", epoch, total / M, v)
    return TrainingResult(best, best_epoch, best_val, initial_val, history, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# validation metrics
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationMetrics:
    rmse_a: float
    rmse_delta: float
    rmse_v: float
    rmse_psi: float
    rmse_s: float
    rmse_t: float
    rmse_position: float
    max_collision_violation: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_predictions(X_hat, U_hat, data: BRArrays, R: float, d_safe: float) -> ValidationMetrics:
    """Controls over ``k = 0..N-1``, states and positions over ``k = 1..N``,
    collision violation over ``k = 0..N`` (max)."""
    du = U_hat - data.U2
    dx = (X_hat - data.X2)[:, 1:]
    dp = _positions(X_hat, R)[:, 1:] - _positions(data.X2, R)[:, 1:]
    rmse = lambda e: float(np.sqrt(np.mean(e * e)))  # noqa: E731
    diff = _positions(data.X1, R) - _positions(X_hat, R)
    viol = np.maximum(0.0, d_safe**2 - np.sum(diff * diff, axis=-1))
    return ValidationMetrics(
        rmse_a=rmse(du[..., 0]), rmse_delta=rmse(du[..., 1]),
        rmse_v=rmse(dx[..., 0]), rmse_psi=rmse(dx[..., 1]), rmse_s=rmse(dx[..., 2]), rmse_t=rmse(dx[..., 3]),
        rmse_position=float(np.sqrt(np.mean(np.sum(dp * dp, axis=-1)))),
        max_collision_violation=float(viol.max(initial=0.0)),
        n_samples=len(data),
    )


def validation_metrics(p: SurrogateParams, val: BRArrays, d_safe: float = 0.25) -> ValidationMetrics:
    from brgame.surrogate import predict_batch

    if len(val) == 0:
        raise ContractError("validation set is empty")
    X_hat, U_hat = predict_batch(p, val.x2_0, val.X1)
    return metrics_from_predictions(X_hat, U_hat, val, p.binding.R, d_safe)


__all__ = [
    "AdamW",
    "TrainingConfig",
    "TrainingResult",
    "ValidationMetrics",
    "br_loss",
    "br_loss_and_grad",
    "clip_grads",
    "feature_stats",
    "metrics_from_predictions",
    "split_indices",
    "train",
    "validation_metrics",
]
