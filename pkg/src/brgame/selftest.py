"""Fast end-to-end self-checks printed as a pass/fail table."""

from __future__ import annotations

import time
import traceback

import numpy as np

from brgame import kernels
from brgame.dataset import BRArrays
from brgame.equilibrium import ExactBestResponse, exact_br, solve_ibr, solve_joint_kkt, solve_reduced
from brgame.game import Trajectory, evaluate_cost
from brgame.harness import infeasibility_components, min_collision_margin, percentile
from brgame.nlp import SolverOptions, finite_diff_jacobian
from brgame.racing import RacingGame
from brgame.surrogate import (
    init_params,
    params_from_bytes,
    params_to_bytes,
    squash,
    surrogate_jacobian,
    surrogate_rollout,
)
from brgame.toy import ToyBestResponse, ToyGame, toy_br2
from brgame.training import TrainingConfig, br_loss, br_loss_and_grad

NE = (1.0 / 3.0, -1.0 / 3.0)
TOY_TOL = 1e-8


def _toy_ne_ok(res):
    return (res.success and abs(res.Z1.U[0, 0] - NE[0]) <= TOY_TOL
            and abs(res.Z2.U[0, 0] - NE[1]) <= TOY_TOL)


def _racing_game():
    return RacingGame(np.array([1.2, 0.05, 1.0, 0.1]), np.array([1.0, -0.05, 1.3, -0.15]))


def build_checks(toy_br=toy_br2):
    """``[(name, callable -> (ok, detail))]``; ``toy_br`` lets tests inject a faulty map."""
    opts = SolverOptions(tol=1e-12, max_outer=60)
    checks = []

    def add(name):
        def deco(fn):
            checks.append((name, fn))
            return fn
        return deco

    @add("toy best-response map matches the nested OCP")
    def _():
        game = ToyGame()
        worst = 0.0
        for v1 in (-1.0, 0.0, 0.25, 1.0):
            Z1 = Trajectory(np.array([[0.0], [v1]]), np.array([[v1]]))
            v2 = exact_br(game, 2, Z1, opts=opts).U[0, 0]
            worst = max(worst, abs(v2 - toy_br(v1)))
        return worst <= TOY_TOL, f"max |dv2| = {worst:.2e}"

    @add("toy reduced (closed-form BR) reaches (1/3, -1/3)")
    def _():
        game = ToyGame()
        res = solve_reduced(game, ToyBestResponse(game, lambda v, p: toy_br(v, p)), opts=opts)
        return _toy_ne_ok(res), f"v = ({res.Z1.U[0, 0]:.10f}, {res.Z2.U[0, 0]:.10f})"

    @add("toy reduced (exact BR) reaches (1/3, -1/3)")
    def _():
        game = ToyGame()
        res = solve_reduced(game, ExactBestResponse(game, opts), opts=opts)
        return _toy_ne_ok(res), f"v = ({res.Z1.U[0, 0]:.10f}, {res.Z2.U[0, 0]:.10f})"

    @add("toy IBR reaches (1/3, -1/3)")
    def _():
        res = solve_ibr(ToyGame(), tol=1e-12, opts=opts)
        return _toy_ne_ok(res), f"{res.iterations} sweeps"

    @add("toy joint KKT reaches (1/3, -1/3)")
    def _():
        res = solve_joint_kkt(ToyGame(), opts=opts)
        return _toy_ne_ok(res), f"v = ({res.Z1.U[0, 0]:.10f}, {res.Z2.U[0, 0]:.10f})"

    @add("toy equilibrium cost J1 = 11/36")
    def _():
        game = ToyGame()
        Z1 = Trajectory(np.array([[0.0], [NE[0]]]), np.array([[NE[0]]]))
        Z2 = Trajectory(np.array([[0.0], [NE[1]]]), np.array([[NE[1]]]))
        J1 = evaluate_cost(game, 1, Z1, Z2)
        return abs(J1 - 11.0 / 36.0) <= 1e-12, f"J1 = {J1:.6f}"

    @add("dynamics Jacobian vs central differences")
    def _():
        rng = np.random.default_rng(0)
        X = np.c_[rng.uniform(0, 2, 50), rng.uniform(-1, 1, 50), rng.uniform(0, 5, 50), rng.uniform(-0.5, 0.5, 50)]
        U = np.c_[rng.uniform(-2, 2, 50), rng.uniform(-0.4, 0.4, 50)]
        args = (0.05, 1 / 3.5, 0.13, 0.13)
        worst = 0.0
        for x, u in zip(X, U):
            _, A, B = kernels.step_jac(x[None], u[None], *args)
            z = np.r_[x, u]
            fd = finite_diff_jacobian(lambda w: kernels.step(w[None, :4], w[None, 4:], *args)[0], z)
            worst = max(worst, float(np.max(np.abs(np.c_[A[0], B[0]] - fd))))
        return worst <= 1e-5, f"max err {worst:.1e}"

    @add("collision constraint Jacobian vs central differences")
    def _():
        game = _racing_game()
        rng = np.random.default_rng(1)
        d1 = game.size(1)
        worst = 0.0
        for _ in range(5):
            z = np.r_[rng.normal(0.5, 0.3, d1), rng.normal(0.5, 0.3, game.size(2))]
            z[2:d1:4] += 1.0
            J = game.ineq_jac(1, z[:d1], z[d1:])
            fd = finite_diff_jacobian(lambda w: game.ineq(1, w[:d1], w[d1:]), z)
            worst = max(worst, float(np.max(np.abs(J - fd))))
        return worst <= 1e-5, f"max err {worst:.1e}"

    @add("surrogate Jacobian vs central differences")
    def _():
        rng = np.random.default_rng(2)
        p = init_params(10, (16, 16, 8), seed=3)
        game = _racing_game()
        X1 = game.rollout(1, game.x0[0], rng.uniform(-0.5, 0.5, (10, 2)))
        J = surrogate_jacobian(p, game.x0[1], X1)
        fd = finite_diff_jacobian(lambda w: surrogate_rollout(p, game.x0[1], w.reshape(11, 4)).flatten(), X1.ravel())
        err = float(np.max(np.abs(J - fd)))
        return err <= 1e-5, f"max err {err:.1e}"

    @add("training-loss gradient vs central differences")
    def _():
        rng = np.random.default_rng(4)
        game = _racing_game()
        B = 3
        X1 = np.stack([game.rollout(1, game.x0[0], rng.uniform(-1, 1, (10, 2))) for _ in range(B)])
        X2 = np.stack([game.rollout(2, game.x0[1], rng.uniform(-1, 1, (10, 2))) for _ in range(B)])
        data = BRArrays(np.tile(game.x0[1], (B, 1)), X1, X2, rng.uniform(-1, 1, (B, 10, 2)))
        p = init_params(10, (8, 8, 4), seed=5)
        cfg = TrainingConfig(d_safe=0.5)
        _, grads = br_loss_and_grad(p, data, cfg)
        W = p.weights[1]
        worst = 0.0
        for idx in [(0, 0), (3, 5), (7, 2)]:
            o = W[idx]
            W[idx] = o + 1e-6
            lp = br_loss(p, data, cfg)
            W[idx] = o - 1e-6
            lm = br_loss(p, data, cfg)
            W[idx] = o
            fd = (lp - lm) / 2e-6
            worst = max(worst, abs(fd - grads[1][0][idx]) / max(abs(fd), 1e-8))
        return worst <= 1e-4, f"max rel err {worst:.1e}"

    @add("squashing stays strictly inside the input box")
    def _():
        p = init_params(10)
        raw = np.array([[-1e6, 1e6], [1e6, -1e6], [50.0, -50.0]])
        u = squash(raw, p.squash)
        ok = bool(np.all(u > p.squash.lower) and np.all(u < p.squash.upper))
        return ok, f"extremes {u.min():.6f}, {u.max():.6f}"

    @add("infeasibility metrics on hand-computed cases")
    def _():
        game = _racing_game()
        U = np.zeros((10, 2))
        X1 = game.rollout(1, game.x0[0], U)
        Z1 = Trajectory(X1, U)
        Zc = Trajectory(X1.copy(), U)
        inf = infeasibility_components(game, Z1, Zc)
        ok = abs(inf.e_col - 0.0625) <= 1e-15 and inf.e_dyn <= 1e-15 and inf.s_infeas == inf.e_col
        m = min_collision_margin(Z1, Zc, game.track, 0.25)
        ok = ok and abs(m + 0.25) <= 1e-15
        return ok, f"e_col {inf.e_col}, margin {m}"

    @add("percentiles by linear interpolation")
    def _():
        t = [0.1, 0.2, 0.3, 10.0]
        med, p95 = percentile(t, 50), percentile(t, 95)
        return abs(med - 0.25) <= 1e-12 and abs(p95 - 8.545) <= 1e-12, f"median {med}, p95 {p95}"

    @add("surrogate parameter file round-trips bit-exactly")
    def _():
        p = init_params(10, seed=6)
        q = params_from_bytes(params_to_bytes(p))
        ok = all(np.array_equal(a, b) for a, b in zip(p.weights + p.biases, q.weights + q.biases))
        return ok and params_to_bytes(q) == params_to_bytes(p), f"{len(params_to_bytes(p))} bytes"

    @add("compiled and numpy kernels agree")
    def _():
        from brgame import _frenet_py as py

        if kernels.BACKEND != "cython":
            return True, "numpy backend only (extension not built)"
        rng = np.random.default_rng(7)
        X = np.c_[rng.uniform(0, 2, 200), rng.uniform(-1, 1, 200), rng.uniform(0, 5, 200), rng.uniform(-0.5, 0.5, 200)]
        U = np.c_[rng.uniform(-2, 2, 200), rng.uniform(-0.4, 0.4, 200)]
        args = (0.05, 1 / 3.5, 0.13, 0.13)
        a, b = kernels.step_jac(X, U, *args), py.step_jac(X, U, *args)
        err = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        return err <= 1e-12, f"max diff {err:.1e}"

    return checks


def run_selftest(out=print, toy_br=toy_br2) -> bool:
    checks = build_checks(toy_br)
    width = max(len(n) for n, _ in checks)
    all_ok = True
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
            traceback.print_exc()
        all_ok &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}  ({time.perf_counter() - t0:.2f}s)")
    out(f"{len(checks)} checks, {'all passed' if all_ok else 'FAILURES'}")
    return all_ok


if __name__ == "__main__":
    import sys

    sys.exit(0 if run_selftest() else 1)
