"""Pure-numpy kernels for the Frenet kinematic bicycle model.

Every function is vectorized over a leading batch axis ``K``: states are
``(K, 4)`` arrays ordered ``(v, psi, s, t)`` and inputs ``(K, 2)`` arrays
ordered ``(a, delta)``.  The compiled extension exposes the same functions
with the same signatures.
"""

import numpy as np

_TWO_PI = 2.0 * np.pi


def wrap_angle(psi):
    """Map to ``[-pi, pi]``; values already in range pass through unchanged."""
    psi = np.asarray(psi, dtype=float)
    return np.where(np.abs(psi) <= np.pi, psi, np.mod(psi + np.pi, _TWO_PI) - np.pi)


def derivative(X, U, kappa, lf, lr):
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    v, psi, t = X[:, 0], X[:, 1], X[:, 3]
    a, delta = U[:, 0], U[:, 1]
    beta = np.arctan(lf / (lf + lr) * np.tan(delta))
    c = np.cos(psi + beta)
    sn = np.sin(psi + beta)
    den = 1.0 - kappa * t
    out = np.empty_like(X)
    out[:, 0] = a
    out[:, 1] = v * np.sin(beta) / lr - kappa * v * c / den
    out[:, 2] = v * c / den
    out[:, 3] = v * sn
    return out


def step(X, U, dt, kappa, lf, lr):
    X = np.asarray(X, dtype=float)
    out = X + dt * derivative(X, U, kappa, lf, lr)
    out[:, 1] = wrap_angle(out[:, 1])
    return out


def step_jac(X, U, dt, kappa, lf, lr):
    """Return ``(X_next, A, B)`` with ``A = dX_next/dX`` and ``B = dX_next/dU``.

    The heading wrap is treated as the identity when differentiating.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    K = X.shape[0]
    v, psi, t = X[:, 0], X[:, 1], X[:, 3]
    a, delta = U[:, 0], U[:, 1]
    r = lf / (lf + lr)
    tan_d = np.tan(delta)
    beta = np.arctan(r * tan_d)
    dbeta = r * (1.0 + tan_d * tan_d) / (1.0 + r * r * tan_d * tan_d)
    sb, cb = np.sin(beta), np.cos(beta)
    c = np.cos(psi + beta)
    sn = np.sin(psi + beta)
    den = 1.0 - kappa * t

    psi_dot = v * sb / lr - kappa * v * c / den
    s_dot = v * c / den
    t_dot = v * sn

    Xn = X.copy()
    Xn[:, 0] += dt * a
    Xn[:, 1] = wrap_angle(psi + dt * psi_dot)
    Xn[:, 2] += dt * s_dot
    Xn[:, 3] += dt * t_dot

    A = np.zeros((K, 4, 4))
    A[:, 0, 0] = 1.0
    A[:, 1, 0] = dt * (sb / lr - kappa * c / den)
    A[:, 1, 1] = 1.0 + dt * kappa * v * sn / den
    A[:, 1, 3] = -dt * kappa * kappa * v * c / (den * den)
    A[:, 2, 0] = dt * c / den
    A[:, 2, 1] = -dt * v * sn / den
    A[:, 2, 2] = 1.0
    A[:, 2, 3] = dt * kappa * v * c / (den * den)
    A[:, 3, 0] = dt * sn
    A[:, 3, 1] = dt * v * c
    A[:, 3, 3] = 1.0

    B = np.zeros((K, 4, 2))
    B[:, 0, 0] = dt
    B[:, 1, 1] = dt * (v * cb / lr + kappa * v * sn / den) * dbeta
    B[:, 2, 1] = -dt * v * sn * dbeta / den
    B[:, 3, 1] = dt * v * c * dbeta
    return Xn, A, B


def rollout(x0, U, dt, kappa, lf, lr):
    U = np.asarray(U, dtype=float)
    X = np.empty((U.shape[0] + 1, 4))
    X[0] = x0
    for k in range(U.shape[0]):
        X[k + 1] = step(X[k:k + 1], U[k:k + 1], dt, kappa, lf, lr)[0]
    return X


def step_curvature(X, U, W, dt, kappa, lf, lr, h=1e-6):
    """Weighted second derivative ``sum_j W[:, j] * d2 x_next_j / dz2``.

    ``z = (x, u)`` is the 6-vector of one step.  Computed by central
    differences of the analytic Jacobian, then symmetrized.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    K = X.shape[0]
    H = np.empty((K, 6, 6))
    for j in range(6):
        Xp, Up = X.copy(), U.copy()
        Xm, Um = X.copy(), U.copy()
        if j < 4:
            Xp[:, j] += h
            Xm[:, j] -= h
        else:
            Up[:, j - 4] += h
            Um[:, j - 4] -= h
        _, Ap, Bp = step_jac(Xp, Up, dt, kappa, lf, lr)
        _, Am, Bm = step_jac(Xm, Um, dt, kappa, lf, lr)
        Jp = np.concatenate([Ap, Bp], axis=2)
        Jm = np.concatenate([Am, Bm], axis=2)
        H[:, :, j] = np.einsum("ki,kij->kj", W, (Jp - Jm) / (2.0 * h))
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))
