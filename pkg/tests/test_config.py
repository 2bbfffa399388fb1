import math

import pytest

from brgame.config import SCHEMA, config_from_mapping, dump_config, load_config
from brgame.errors import ConfigError


def test_defaults_reproduce_benchmark_setup():
    cfg = load_config()
    p = cfg.racing_params()
    assert (p.N, p.dt, p.track.R, p.bounds.d_safe) == (10, 0.05, 3.5, 0.25)
    assert p.bounds.u_upper[1] == pytest.approx(math.radians(25))
    t = cfg.training_config()
    assert (t.lr, t.batch_size, t.epochs, t.hidden) == (3e-4, 256, 150, (128, 128, 64))
    mc = cfg.montecarlo_config()
    assert mc.n_trials == 100 and mc.methods == ("reduced", "ibr", "joint")


def test_dump_reload_identical(tmp_path):
    cfg = load_config(overrides=["training.epochs=7", "game.dt=0.04", "montecarlo.methods=ibr,joint"])
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again == cfg and again.hash() == cfg.hash()


def test_hash_is_per_section():
    a, b = load_config(), load_config(overrides=["training.epochs=3"])
    assert a.hash("game", "dataset") == b.hash("game", "dataset")
    assert a.hash("training") != b.hash("training")


@pytest.mark.parametrize("data", [
    {"bogus": {}},
    {"game": {"nope": "1"}},
    {"game": {"N": "ten"}},
    {"run": {"single_thread": "maybe"}},
    {"dataset": {"n_samples": "0"}},
    {"montecarlo": {"methods": "ibr", "baseline": "joint"}},
    {"montecarlo": {"methods": "newton"}},
    {"training": {"lr": "-1"}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_mapping(data)


def test_bad_override_and_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(overrides=["epochs=3"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_output_dir_precedence(monkeypatch):
    monkeypatch.delenv("BRGAME_OUTPUT_DIR", raising=False)
    assert load_config().output_dir() == "brgame_out"
    monkeypatch.setenv("BRGAME_OUTPUT_DIR", "/tmp/env_out")
    assert load_config().output_dir() == "/tmp/env_out"
    assert load_config(overrides=["run.output_dir=/tmp/x"]).output_dir() == "/tmp/x"


def test_schema_keys_all_have_defaults():
    cfg = load_config()
    for sec, keys in SCHEMA.items():
        assert set(cfg.section(sec)) == set(keys)
