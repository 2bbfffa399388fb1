import numpy as np
import pytest

from brgame import _frenet_py
from brgame.racing import RacingGame

try:
    from brgame import _frenet_ext
except ImportError:  # extension not built
    _frenet_ext = None

KERNEL_ARGS = (0.05, 1.0 / 3.5, 0.13, 0.13)
BACKENDS = [pytest.param(_frenet_py, id="numpy")]
if _frenet_ext is not None:
    BACKENDS.append(pytest.param(_frenet_ext, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def racing_game():
    return RacingGame(np.array([1.2, 0.05, 1.0, 0.1]), np.array([1.0, -0.05, 1.3, -0.15]))


def random_states(rng, n):
    """Feasible states (v, psi, s, t) away from the wrap discontinuity."""
    return np.c_[rng.uniform(0, 2, n), rng.uniform(-1.0, 1.0, n),
                 rng.uniform(0, 5.4, n), rng.uniform(-0.5, 0.5, n)]


def random_inputs(rng, n):
    return np.c_[rng.uniform(-2, 2, n), rng.uniform(-0.436, 0.436, n)]


def _static(game, player, X):
    """Trajectory with the given states and zero inputs (defects are not checked)."""
    from brgame.game import Trajectory

    return Trajectory(np.asarray(X, float), np.zeros((game.N, 2)))


def metric_cases():
    """Hand-computed metric micro-suite: ``[(name, computed, expected)]``.

    Built on an arc of radius 3.5 where two points at equal progress and
    lateral offsets ``t1, t2`` are exactly ``|t1 - t2|`` apart.
    """
    from brgame.game import Trajectory
    from brgame.harness import Infeasibility, infeasibility_components, min_collision_margin

    game = RacingGame(np.array([1.0, 0.0, 1.0, 0.25]), np.array([1.0, 0.0, 1.0, -0.25]))
    N, d_safe, track = game.N, game.params.bounds.d_safe, game.track
    U = np.zeros((N, 2))
    Z1 = Trajectory(game.rollout(1, game.x0[0], U), U)
    Z2 = Trajectory(game.rollout(2, game.x0[1], U), U)
    clean = infeasibility_components(game, Z1, Z2)

    Zc = Trajectory(Z1.X.copy(), U)
    coincident = infeasibility_components(game, Z1, Zc)

    s = np.linspace(1.0, 1.5, N + 1)
    lane = lambda t: np.c_[np.ones(N + 1), np.zeros(N + 1), s, t]
    A = _static(game, 1, lane(np.full(N + 1, 0.35)))
    B = _static(game, 2, lane(np.full(N + 1, -0.35)))
    t_touch = np.full(N + 1, -0.35)
    t_touch[4] = 0.35 - d_safe
    t_hit = np.full(N + 1, -0.35)
    t_hit[7] = 0.35
    return [
        ("clean rollout -> (0, 0, 0, 0)",
         (clean.e_dyn, clean.e_col, clean.e_bnd, clean.s_infeas), (0.0, 0.0, 0.0, 0.0)),
        ("coincident step -> e_col = d_safe^2", coincident.e_col, 0.0625),
        ("s_infeas is the max component", Infeasibility(1e-3, 0.0, 2e-3).s_infeas, 2e-3),
        ("constant separation 0.7 -> margin 0.45", min_collision_margin(A, B, track, d_safe), 0.45),
        ("one step at d_safe -> margin 0",
         min_collision_margin(A, _static(game, 2, lane(t_touch)), track, d_safe), 0.0),
        ("one coincident step -> margin -0.25",
         min_collision_margin(A, _static(game, 2, lane(t_hit)), track, d_safe), -0.25),
    ]


# (criterion number, line) per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
