import json
import os

import pytest

from brgame.cli import main
from brgame.selftest import build_checks, run_selftest
from brgame.toy import toy_br2

TINY = """\
[dataset]
n_samples = 8
seed = 3
[training]
epochs = 3
batch_size = 4
hidden = 8,8
[solver]
time_limit = 5
[montecarlo]
n_trials = 2
methods = reduced,ibr
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return str(path), str(tmp_path / "out")


def test_selftest_passes(tmp_path, capsys):
    assert main(["selftest", "--output-dir", str(tmp_path)]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) >= 10 and all(ln.startswith("PASS") for ln in lines)


def test_selftest_detects_faulty_map(capsys):
    assert run_selftest(toy_br=lambda v, p=None: -toy_br2(v, p)) is False
    assert "FAIL" in capsys.readouterr().out
    assert len(build_checks()) >= 10


def test_toy_solve_prints_equilibrium(tmp_path, capsys):
    for method in ("joint", "ibr", "reduced"):
        assert main(["solve", "--toy", "--method", method, "--output-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "(0.3333333333, -0.3333333333)" in out
    saved = json.loads((tmp_path / "solve_reduced.json").read_text())
    assert saved["status"] == "Succeeded"


def test_missing_surrogate_is_usage_error(tmp_path, capsys):
    missing = tmp_path / "nope.bin"
    code = main(["solve", "--method", "reduced", "--params", str(missing), "--output-dir", str(tmp_path)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    assert main(["selftest", "--set", "game.bogus=1", "--output-dir", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["no-such-command"]) == 2


def test_bad_state_argument(tmp_path):
    assert main(["solve", "--method", "ibr", "--x1", "1,2", "--x2", "1,0,1,0",
                 "--output-dir", str(tmp_path)]) == 2


def test_racing_solve_exact(tmp_path, capsys):
    code = main(["solve", "--method", "reduced", "--exact-br", "--seed", "1", "--output-dir", str(tmp_path)])
    assert code == 0
    assert "status Succeeded" in capsys.readouterr().out


def test_pipeline_resume(tiny, capsys):
    cfg, out = tiny
    assert main(["pipeline", "--config", cfg, "--output-dir", out]) == 0
    for name in ("dataset.jsonl", "surrogate.bin", "validation.json", "mc_results.jsonl", "summary.csv"):
        assert os.path.exists(os.path.join(out, name))
    capsys.readouterr()
    before = os.path.getmtime(os.path.join(out, "dataset.jsonl"))

    assert main(["pipeline", "--config", cfg, "--output-dir", out]) == 0
    text = capsys.readouterr().out
    assert text.count("up to date, skipped") == 5

    assert main(["pipeline", "--config", cfg, "--output-dir", out, "--set", "training.epochs=2"]) == 0
    text = capsys.readouterr().out
    assert "[generate-dataset] up to date" in text
    for stage in ("train", "validate", "montecarlo", "report"):
        assert f"[{stage}] running" in text
    assert os.path.getmtime(os.path.join(out, "dataset.jsonl")) == before
    hist = json.loads(open(os.path.join(out, "training.json")).read())["history"]
    assert len(hist) == 3


def test_stage_commands_report_missing_inputs(tmp_path, capsys):
    assert main(["train", "--output-dir", str(tmp_path)]) == 2
    assert "dataset.jsonl" in capsys.readouterr().err
    assert main(["report", "--output-dir", str(tmp_path)]) == 2
