# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the Frenet kinematic bicycle model.

Mirrors :mod:`brgame._frenet_py` function for function.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, tan, atan, fmod, M_PI

cnp.import_array()


cdef inline double _wrap(double psi) nogil:
    if -M_PI <= psi <= M_PI:
        return psi
    cdef double r = fmod(psi + M_PI, 2.0 * M_PI)
    if r < 0:
        r += 2.0 * M_PI
    return r - M_PI


def wrap_angle(psi):
    psi = np.asarray(psi, dtype=float)
    return np.where(np.abs(psi) <= np.pi, psi, np.mod(psi + np.pi, 2.0 * np.pi) - np.pi)


cdef inline void _jac_one(double v, double psi, double t, double a, double delta,
                          double dt, double kappa, double lf, double lr,
                          double* xn, double* A, double* B, bint want_jac) nogil:
    # xn holds the increment (without the base state); A is 4x4, B is 4x2 row-major
    cdef double r = lf / (lf + lr)
    cdef double tan_d = tan(delta)
    cdef double beta = atan(r * tan_d)
    cdef double sb = sin(beta), cb = cos(beta)
    cdef double c = cos(psi + beta), sn = sin(psi + beta)
    cdef double den = 1.0 - kappa * t
    cdef double dbeta
    xn[0] = dt * a
    xn[1] = dt * (v * sb / lr - kappa * v * c / den)
    xn[2] = dt * v * c / den
    xn[3] = dt * v * sn
    if not want_jac:
        return
    dbeta = r * (1.0 + tan_d * tan_d) / (1.0 + r * r * tan_d * tan_d)
    cdef int i
    for i in range(16):
        A[i] = 0.0
    for i in range(8):
        B[i] = 0.0
    A[0] = 1.0
    A[4] = dt * (sb / lr - kappa * c / den)
    A[5] = 1.0 + dt * kappa * v * sn / den
    A[7] = -dt * kappa * kappa * v * c / (den * den)
    A[8] = dt * c / den
    A[9] = -dt * v * sn / den
    A[10] = 1.0
    A[11] = dt * kappa * v * c / (den * den)
    A[12] = dt * sn
    A[13] = dt * v * c
    A[15] = 1.0
    B[0] = dt
    B[3] = dt * (v * cb / lr + kappa * v * sn / den) * dbeta
    B[5] = -dt * v * sn * dbeta / den
    B[7] = dt * v * c * dbeta


def derivative(X, U, double kappa, double lf, double lr):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=float)
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=float)
    cdef Py_ssize_t K = x.shape[0], k
    out = np.empty((K, 4))
    cdef double[:, ::1] o = out
    cdef double inc[4]
    cdef double Ad[16]
    cdef double Bd[8]
    for k in range(K):
        _jac_one(x[k, 0], x[k, 1], x[k, 3], u[k, 0], u[k, 1], 1.0, kappa, lf, lr,
                 inc, Ad, Bd, False)
        o[k, 0] = inc[0]
        o[k, 1] = inc[1]
        o[k, 2] = inc[2]
        o[k, 3] = inc[3]
    return out


def step(X, U, double dt, double kappa, double lf, double lr):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=float)
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=float)
    cdef Py_ssize_t K = x.shape[0], k
    out = np.empty((K, 4))
    cdef double[:, ::1] o = out
    cdef double inc[4]
    cdef double Ad[16]
    cdef double Bd[8]
    for k in range(K):
        _jac_one(x[k, 0], x[k, 1], x[k, 3], u[k, 0], u[k, 1], dt, kappa, lf, lr,
                 inc, Ad, Bd, False)
        o[k, 0] = x[k, 0] + inc[0]
        o[k, 1] = _wrap(x[k, 1] + inc[1])
        o[k, 2] = x[k, 2] + inc[2]
        o[k, 3] = x[k, 3] + inc[3]
    return out


def step_jac(X, U, double dt, double kappa, double lf, double lr):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=float)
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=float)
    cdef Py_ssize_t K = x.shape[0], k
    out = np.empty((K, 4))
    A_arr = np.empty((K, 4, 4))
    B_arr = np.empty((K, 4, 2))
    cdef double[:, ::1] o = out
    cdef double[:, :, ::1] A = A_arr
    cdef double[:, :, ::1] B = B_arr
    cdef double inc[4]
    for k in range(K):
        _jac_one(x[k, 0], x[k, 1], x[k, 3], u[k, 0], u[k, 1], dt, kappa, lf, lr,
                 inc, &A[k, 0, 0], &B[k, 0, 0], True)
        o[k, 0] = x[k, 0] + inc[0]
        o[k, 1] = _wrap(x[k, 1] + inc[1])
        o[k, 2] = x[k, 2] + inc[2]
        o[k, 3] = x[k, 3] + inc[3]
    return out, A_arr, B_arr


def rollout(x0, U, double dt, double kappa, double lf, double lr):
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=float)
    cdef Py_ssize_t N = u.shape[0], k
    X_arr = np.empty((N + 1, 4))
    cdef double[:, ::1] X = X_arr
    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=float)
    cdef double inc[4]
    cdef double Ad[16]
    cdef double Bd[8]
    X[0, 0] = x0v[0]
    X[0, 1] = x0v[1]
    X[0, 2] = x0v[2]
    X[0, 3] = x0v[3]
    for k in range(N):
        _jac_one(X[k, 0], X[k, 1], X[k, 3], u[k, 0], u[k, 1], dt, kappa, lf, lr,
                 inc, Ad, Bd, False)
        X[k + 1, 0] = X[k, 0] + inc[0]
        X[k + 1, 1] = _wrap(X[k, 1] + inc[1])
        X[k + 1, 2] = X[k, 2] + inc[2]
        X[k + 1, 3] = X[k, 3] + inc[3]
    return X_arr


def step_curvature(X, U, W, double dt, double kappa, double lf, double lr,
                   double h=1e-6):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=float)
    cdef const double[:, ::1] u = np.ascontiguousarray(U, dtype=float)
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=float)
    cdef Py_ssize_t K = x.shape[0], k
    cdef int i, j, col
    H_arr = np.empty((K, 6, 6))
    cdef double[:, :, ::1] H = H_arr
    cdef double z[6]
    cdef double zp[6]
    cdef double inc[4]
    cdef double Ap[16]
    cdef double Bp[8]
    cdef double Am[16]
    cdef double Bm[8]
    cdef double acc, dp, dm
    for k in range(K):
        z[0] = x[k, 0]
        z[1] = x[k, 1]
        z[2] = x[k, 2]
        z[3] = x[k, 3]
        z[4] = u[k, 0]
        z[5] = u[k, 1]
        for j in range(6):
            for i in range(6):
                zp[i] = z[i]
            zp[j] = z[j] + h
            _jac_one(zp[0], zp[1], zp[3], zp[4], zp[5], dt, kappa, lf, lr,
                     inc, Ap, Bp, True)
            zp[j] = z[j] - h
            _jac_one(zp[0], zp[1], zp[3], zp[4], zp[5], dt, kappa, lf, lr,
                     inc, Am, Bm, True)
            for col in range(6):
                acc = 0.0
                for i in range(4):
                    if col < 4:
                        dp = Ap[i * 4 + col]
                        dm = Am[i * 4 + col]
                    else:
                        dp = Bp[i * 2 + col - 4]
                        dm = Bm[i * 2 + col - 4]
                    acc += w[k, i] * (dp - dm) / (2.0 * h)
                H[k, col, j] = acc
        for i in range(6):
            for j in range(i + 1, 6):
                acc = 0.5 * (H[k, i, j] + H[k, j, i])
                H[k, i, j] = acc
                H[k, j, i] = acc
    return H_arr
