import numpy as np
import pytest

from brgame.equilibrium import (
    BestResponseError,
    ExactBestResponse,
    br_residual,
    build_reduced_problem,
    exact_br,
    initial_guess,
    reduced_layout,
    solve_ibr,
    solve_joint_kkt,
    solve_reduced,
)
from brgame.frenet import Bounds
from brgame.game import QuadraticCost, Trajectory, nash_check
from brgame.harness import sample_initial_conditions
from brgame.nlp import SolverOptions, Status, finite_diff_jacobian, kkt_residual, solve_nlp
from brgame.racing import RacingGame, RacingParams
from brgame.toy import ToyBestResponse, ToyGame, toy_br2

TIGHT = SolverOptions(tol=1e-12, max_outer=60)


def v(Z):
    return Z.U[0, 0]


def toy_traj(val):
    return Trajectory(np.array([[0.0], [val]]), np.array([[val]]))


def test_toy_exact_br_both_players():
    game = ToyGame()
    assert v(exact_br(game, 2, toy_traj(1 / 3), opts=TIGHT)) == pytest.approx(-1 / 3, abs=1e-10)
    assert v(exact_br(game, 1, toy_traj(-1 / 3), opts=TIGHT)) == pytest.approx(1 / 3, abs=1e-10)


@pytest.mark.parametrize("make_br", [lambda g: ExactBestResponse(g, TIGHT), lambda g: ToyBestResponse(g)],
                         ids=["exact", "closed-form"])
def test_toy_reduced(make_br):
    game = ToyGame()
    br = make_br(game)
    res = solve_reduced(game, br, opts=TIGHT)
    assert res.success
    assert v(res.Z1) == pytest.approx(1 / 3, abs=1e-8) and v(res.Z2) == pytest.approx(-1 / 3, abs=1e-8)
    assert res.br_residual_norm <= 1e-10


def test_toy_reduced_equality_zero_at_ne():
    game = ToyGame()
    p = build_reduced_problem(game, ExactBestResponse(game, TIGHT))
    L = reduced_layout(game)
    y = L.pack(toy_traj(1 / 3).flatten(), toy_traj(-1 / 3).flatten())
    assert np.max(np.abs(p.eval_eq(y))) <= 1e-10


def test_reduced_toy_solve_from_origin():
    game = ToyGame()
    p = build_reduced_problem(game, ToyBestResponse(game))
    out = solve_nlp(p, np.zeros(p.n), TIGHT)
    z1, z2 = reduced_layout(game).unpack(out.x)
    assert out.success
    assert z1[2] == pytest.approx(1 / 3, abs=1e-8) and z2[2] == pytest.approx(-1 / 3, abs=1e-8)


def test_reduced_dimension_racing(racing_game):
    p = build_reduced_problem(racing_game, ExactBestResponse(racing_game))
    assert p.n == 20 + 44 + 64 == 128
    assert p.n_eq == 40 + 64
    # both players' boxes apply; x2_0 is pinned and the heading is the free wrap coordinate
    lo2, hi2 = reduced_layout(racing_game).unpack(p.lower)[1], reduced_layout(racing_game).unpack(p.upper)[1]
    X2lo, X2hi = lo2[:44].reshape(11, 4), hi2[:44].reshape(11, 4)
    assert np.array_equal(X2lo[0], racing_game.x0[1]) and np.array_equal(X2hi[0], racing_game.x0[1])
    assert np.all(X2lo[1:, 3] == -0.5) and np.all(X2hi[1:, 3] == 0.5)
    assert np.all(np.isinf(X2lo[1:, 1]))
    assert np.all(hi2[44:].reshape(10, 2)[:, 0] == 2.0)


def test_ibr_toy_sweeps():
    game = ToyGame()
    r1 = solve_ibr(game, max_outer=1, tol=1e-14, opts=TIGHT)
    assert v(r1.Z2) == pytest.approx(-0.5, abs=1e-10) and v(r1.Z1) == pytest.approx(0.25, abs=1e-10)
    r2 = solve_ibr(game, max_outer=2, tol=1e-14, opts=TIGHT)
    assert v(r2.Z2) == pytest.approx(-0.375, abs=1e-10) and v(r2.Z1) == pytest.approx(0.3125, abs=1e-10)
    assert r2.status is Status.MAX_ITER
    res = solve_ibr(game, tol=1e-12, opts=TIGHT)
    assert res.success
    assert v(res.Z1) == pytest.approx(1 / 3, abs=1e-8) and v(res.Z2) == pytest.approx(-1 / 3, abs=1e-8)


def test_ibr_fixed_point_and_infinite_tol():
    game = ToyGame()
    res = solve_ibr(game, init=(toy_traj(1 / 3), toy_traj(-1 / 3)), tol=1e-10, opts=TIGHT)
    assert res.success and res.iterations == 1 and res.step_change <= 1e-10
    res = solve_ibr(game, tol=np.inf)
    assert res.success and res.iterations == 1


def test_joint_toy_one_newton_step_and_agrees_with_ibr():
    game = ToyGame()
    res = solve_joint_kkt(game, opts=TIGHT)
    assert res.success
    assert res.trace[0]["phase"] == "newton" and res.iterations == 1
    ibr = solve_ibr(game, tol=1e-13, opts=TIGHT)
    assert abs(v(res.Z1) - v(ibr.Z1)) <= 1e-10 and abs(v(res.Z2) - v(ibr.Z2)) <= 1e-10
    red = solve_reduced(game, ExactBestResponse(game, TIGHT), opts=TIGHT)
    assert abs(v(res.Z1) - v(red.Z1)) <= 1e-8 and abs(v(res.Z2) - v(red.Z2)) <= 1e-8


def test_br_residual_examples():
    game = ToyGame()
    br = ToyBestResponse(game)
    X1 = np.array([[0.0], [1.0]])
    assert br_residual(br.evaluate(X1), br, X1) == 0.0
    assert br_residual(toy_traj(0.0), br, X1) == 0.0
    assert br_residual(toy_traj(0.1), br, X1) == pytest.approx(0.1, abs=1e-15)


def test_gradient_masking_partial_vs_total():
    game = ToyGame()
    J1 = lambda a, b: game.cost(1, toy_traj(a).flatten(), toy_traj(b).flatten())
    v1, v2 = 1 / 3, -1 / 3
    partial = finite_diff_jacobian(lambda w: np.array([J1(w[0], v2)]), np.array([v1]))[0, 0]
    assert abs(partial) <= 1e-8
    total = finite_diff_jacobian(lambda w: np.array([J1(w[0], toy_br2(w[0]))]), np.array([v1]))[0, 0]
    assert abs(total) == pytest.approx(1 / 6, abs=1e-8)


def test_reduced_scaling_invariance():
    base = solve_reduced(ToyGame(), ToyBestResponse(ToyGame()), opts=TIGHT)
    for c in (0.01, 7.0):
        game = ToyGame()
        cost = game._costs[1]
        game._costs[1] = QuadraticCost(c * cost.Q, c * cost.c, c * cost.const)
        res = solve_reduced(game, ToyBestResponse(game), opts=TIGHT)
        assert res.success
        assert abs(v(res.Z1) - v(base.Z1)) <= 1e-8 and abs(v(res.Z2) - v(base.Z2)) <= 1e-8


def test_exact_br_jacobian_toy_matches_closed_form():
    game = ToyGame()
    X1 = np.array([[0.0], [0.4]])
    J = ExactBestResponse(game, TIGHT).jacobian(X1)
    np.testing.assert_allclose(J, ToyBestResponse(game).jacobian(X1), atol=1e-8)


def test_exact_br_jacobian_racing_matches_fd(racing_game):
    g = racing_game
    br = ExactBestResponse(g)
    X1 = g.rollout(1, g.x0[0], np.tile([0.5, 0.05], (10, 1)))
    J = br.jacobian(X1)
    fd = finite_diff_jacobian(lambda w: ExactBestResponse(g).evaluate(w.reshape(11, 4)).flatten(),
                              X1.ravel(), h=1e-5)
    assert np.max(np.abs(J - fd)) <= 1e-4


def test_exact_br_failure_raises():
    game = RacingGame(np.array([1.0, 0, 1.0, 0.0]), np.array([1.0, 0, 1.0, 0.0]))
    Z1 = initial_guess(game)[0]
    with pytest.raises(BestResponseError):
        exact_br(game, 2, Z1, opts=SolverOptions(max_outer=5, rho_max=1e4))


def test_racing_br_collision_inactive_when_far():
    x1, x2 = np.array([1.0, 0, 4.0, 0.3]), np.array([1.0, 0, 0.5, -0.3])
    with_col = RacingGame(x1, x2)
    without = RacingGame(x1, x2, RacingParams(bounds=Bounds(d_safe=0.0)))
    Z1 = initial_guess(with_col)[0]
    a = exact_br(with_col, 2, Z1)
    b = exact_br(without, 2, Z1)
    assert np.max(np.abs(a.flatten() - b.flatten())) <= 1e-6


def test_joint_racing_decoupled_blocks_are_best_responses():
    g = RacingGame(np.array([1.0, 0, 4.0, 0.3]), np.array([1.0, 0, 0.5, -0.3]))
    res = solve_joint_kkt(g)
    assert res.success
    assert np.max(np.abs(exact_br(g, 2, res.Z1).flatten() - res.Z2.flatten())) <= 1e-4
    assert np.max(np.abs(exact_br(g, 1, res.Z2).flatten() - res.Z1.flatten())) <= 1e-4


def test_racing_ibr_fixed_point(racing_game):
    g = racing_game
    res = solve_ibr(g)
    assert res.success
    assert np.max(np.abs(exact_br(g, 2, res.Z1).flatten() - res.Z2.flatten())) <= 1e-5
    assert np.max(np.abs(exact_br(g, 1, res.Z2).flatten() - res.Z1.flatten())) <= 1e-5


def test_reduced_exact_nash_sampler_seed0():
    x1, x2 = sample_initial_conditions(0)
    g = RacingGame(x1, x2)
    res = solve_reduced(g, ExactBestResponse(g))
    assert res.success
    rep = nash_check(g, res.Z1, res.Z2, 1e-2, 200, 0)
    assert rep.candidate_feasible
    assert rep.max_J1_improvement <= 1e-4 and rep.max_J2_improvement <= 1e-4
    assert res.br_residual_norm <= 1e-6
    # status implies a small KKT residual
    assert res.kkt_residual.max() <= 1e-6
