import math
import random

import numpy as np
import pytest

from brgame.errors import ConfigError, ContractError, SamplingError
from brgame.harness import (
    MonteCarloConfig,
    TrialResult,
    TrialSpec,
    dominant_failure,
    ecdf,
    initial_pair_ok,
    percentile,
    read_results_jsonl,
    run_monte_carlo,
    run_trial,
    sample_initial_conditions,
    sampling_box,
    summarize,
    trial_specs,
    write_report,
    write_results_jsonl,
    write_summary_csv,
)
from brgame.harness import _separation
from brgame.racing import default_racing_params
from brgame.seeding import derive_seed, splitmix64
from brgame.toy import ToyBestResponse, ToyGame, toy_br2
from conftest import metric_cases

P = default_racing_params()


def _result(tid, method, status="Succeeded", J1=1.0, t=0.1, it=5, margin=0.1):
    return TrialResult(tid, 0, method, status, t, it, 0.0, 0.0, 0.0, 0.0, margin, 0.0, J1, 0.0)


# ---------------------------------------------------------------- sampling

def test_sampler_acceptance_predicates():
    rng = np.random.default_rng(7)
    lo, hi = sampling_box(P)
    seps = []
    for _ in range(1000):
        x1, x2 = sample_initial_conditions(int(rng.integers(2**63)), P)
        d = _separation(x1, x2, P.track)
        assert P.bounds.d_safe <= d <= 0.7
        assert initial_pair_ok(x1, x2, P)
        for x in (x1, x2):
            assert np.all(x >= lo) and np.all(x <= hi)
        seps.append(d)
    assert 0.25 <= min(seps) and max(seps) <= 0.7
    assert hi[2] == pytest.approx(P.bounds.x_upper[2] - 2.0 * 10 * 0.05)


def test_sampler_deterministic():
    a = sample_initial_conditions(123)
    b = sample_initial_conditions(123)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    c = sample_initial_conditions(124)
    assert not np.array_equal(a[0], c[0])


def test_sampler_budget():
    with pytest.raises(SamplingError):
        sample_initial_conditions(0, proximity=0.2, budget=50)


def test_seed_derivation():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert derive_seed(0, 1) == splitmix64(splitmix64(0) ^ 1)
    assert len({derive_seed(5, i) for i in range(1000)}) == 1000


# ---------------------------------------------------------------- metrics

@pytest.mark.parametrize("name,computed,expected", metric_cases(), ids=lambda v: v if isinstance(v, str) else "")
def test_metric_micro_suite(name, computed, expected):
    np.testing.assert_allclose(computed, expected, rtol=0, atol=1e-12)


def test_excess_clamps():
    from brgame.harness import Infeasibility

    e = Infeasibility(1e-3, 0.0, 2e-3).excess(1.5e-3)
    assert (e.e_dyn, e.e_col) == (0.0, 0.0)
    assert e.e_bnd == pytest.approx(5e-4)


def test_margin_contract(racing_game):
    from brgame.game import Trajectory

    Z = Trajectory(np.zeros((11, 4)), np.zeros((10, 2)))
    W = Trajectory(np.zeros((6, 4)), np.zeros((5, 2)))
    from brgame.harness import min_collision_margin

    with pytest.raises(ContractError):
        min_collision_margin(Z, W, racing_game.track, 0.25)


# ---------------------------------------------------------------- trials

def test_toy_trial_joint():
    spec = TrialSpec(0, 0, [0.0], [0.0], "joint")
    r = run_trial(spec, ToyGame())
    assert r.status == "Succeeded"
    assert r.s_infeas <= 1e-15  # zero up to the rounding of the KKT solve
    assert r.J1 == pytest.approx(11 / 36, abs=1e-10)


def test_toy_trial_reduced_with_operator():
    game = ToyGame()
    r = run_trial(TrialSpec(0, 0, [0.0], [0.0], "reduced"), game, ToyBestResponse(game, toy_br2))
    assert r.success and r.J1 == pytest.approx(11 / 36, abs=1e-10)


def test_reduced_requires_br():
    with pytest.raises(ConfigError):
        run_trial(TrialSpec(0, 0, [0.0], [0.0], "reduced"), ToyGame())
    with pytest.raises(ConfigError):
        TrialSpec(0, 0, [0.0], [0.0], "newton")
    with pytest.raises(ConfigError):
        run_monte_carlo(MonteCarloConfig(n_trials=1, methods=("reduced",)))


def test_trial_repeatable():
    x1, x2 = sample_initial_conditions(derive_seed(0, 1))
    spec = TrialSpec(1, 0, x1, x2, "ibr")
    a, b = run_trial(spec), run_trial(spec)
    assert a.comparable() == b.comparable()
    assert "wall_time" not in a.comparable()


# ---------------------------------------------------------------- campaigns

def test_pairing_and_worker_invariance():
    cfg = MonteCarloConfig(n_trials=4, methods=("joint", "ibr"), master_seed=3)
    specs = trial_specs(cfg)
    assert len(specs) == 8
    pairs = {(s.trial_id, tuple(s.x1_0), tuple(s.x2_0)) for s in specs}
    assert len(pairs) == 4
    r1 = run_monte_carlo(cfg)
    r2 = run_monte_carlo(MonteCarloConfig(n_trials=4, methods=("joint", "ibr"), master_seed=3, workers=2))
    assert len(r1) == 8
    assert [r.comparable() for r in r1] == [r.comparable() for r in r2]
    assert [(r.trial_id, r.method) for r in r1] == [(i, m) for i in range(4) for m in ("ibr", "joint")]
    other = trial_specs(MonteCarloConfig(n_trials=4, methods=("ibr",), master_seed=4))
    assert all(not np.array_equal(a.x1_0, b.x1_0) for a, b in zip(specs[::2], other))


def test_config_validation():
    with pytest.raises(ConfigError):
        MonteCarloConfig(n_trials=0)
    with pytest.raises(ConfigError):
        MonteCarloConfig(workers=0)
    with pytest.raises(ConfigError):
        MonteCarloConfig(methods=("foo",))


# ---------------------------------------------------------------- summaries

def test_success_rate_and_percentiles():
    rs = [_result(i, "ibr", s) for i, s in enumerate(["Succeeded", "Succeeded", "InfeasibleDetected", "Succeeded"])]
    s = summarize(rs)["ibr"]
    assert s.success_pct == 75.0
    assert dominant_failure(s) == "InfeasibleDetected"
    t = [0.1, 0.2, 0.3, 10.0]
    assert percentile(t, 50) == pytest.approx(0.25, abs=1e-15)
    assert percentile(t, 95) == pytest.approx(8.545, abs=1e-12)
    assert percentile([], 50) is None


def test_times_success_only():
    rs = [_result(0, "ibr", t=1.0), _result(1, "ibr", "MaxIterExceeded", t=100.0)]
    assert summarize(rs)["ibr"].median_time == 1.0


def test_self_pairing_and_absent_dJ1():
    rs = [_result(i, m, J1=float(i)) for i in range(3) for m in ("ibr", "joint")]
    s = summarize(rs)
    assert s["ibr"].dJ1_median == 0.0 and s["ibr"].dJ1_n == 3
    fail = [_result(0, "ibr"), _result(0, "joint", "NumericalFailure")]
    s = summarize(fail)["joint"]
    assert s.dJ1_median is None and s.dJ1_n == 0


def test_paired_difference():
    rs = [_result(0, "ibr", J1=1.0), _result(0, "reduced", J1=1.5), _result(1, "ibr", J1=2.0),
          _result(1, "reduced", "InfeasibleDetected", J1=9.0)]
    s = summarize(rs)["reduced"]
    assert s.dJ1_n == 1 and s.dJ1_median == 0.5


def test_summarize_permutation_invariant():
    rng = random.Random(0)
    rs = [_result(i, m, rng.choice(["Succeeded", "MaxIterExceeded"]), J1=rng.random(), t=rng.random(),
                  margin=rng.uniform(-0.1, 0.1)) for i in range(20) for m in ("reduced", "ibr", "joint")]
    a = {k: v.to_dict() for k, v in summarize(rs).items()}
    rng.shuffle(rs)
    assert a == {k: v.to_dict() for k, v in summarize(rs).items()}
    with pytest.raises(ContractError):
        summarize([])


def test_collision_percentages():
    rs = [_result(0, "ibr", margin=-0.01), _result(1, "ibr", margin=0.2),
          _result(2, "ibr", "MaxIterExceeded", margin=-0.3), _result(3, "ibr", margin=0.0)]
    s = summarize(rs)["ibr"]
    assert s.coll_viol_pct_success == pytest.approx(100 / 3)
    assert s.coll_viol_pct_all == 50.0


def test_outputs_round_trip(tmp_path):
    rs = [_result(i, m, J1=0.5 * i) for i in range(3) for m in ("reduced", "ibr")]
    rs[1].J1 = math.nan
    path = tmp_path / "r.jsonl"
    write_results_jsonl(rs, path)
    back = read_results_jsonl(path)
    assert [r.trial_id for r in back] == [r.trial_id for r in rs]
    write_summary_csv(summarize(back), tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[0].startswith("method,n_trials,success_pct")
    assert len(text) == 4 and "linear interpolation" in text[-1]
    files = write_report(back, tmp_path / "rep")
    names = {p.split("/")[-1] for p in files}
    assert "ecdf_margin_reduced.csv" in names and "hist_dJ1_reduced_vs_ibr.csv" in names
    x, F = ecdf([3.0, 1.0, None, 2.0])
    assert x.tolist() == [1.0, 2.0, 3.0] and F[-1] == 1.0
