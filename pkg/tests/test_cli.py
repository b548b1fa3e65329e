from __future__ import annotations

import json

import pytest

from towerdyn.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_INTERNAL, EXIT_OK, run
from towerdyn.config import load_config, parse_config, STAGES
from towerdyn.errors import ConfigError
from towerdyn.pipeline import format_report, SUMMARY_KEYS

SMALL = """\
map = logistic
params = 4.0
ell = 2
seed = 3
N = 2000
density_samples = 1000000
corr_samples = 1000000
corr_n_max = 10
phi = x
psi = x
clt_block = 500
clt_trials = 500
stages = analyze, corr, clt
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_minimal():
    cfg = parse_config("map = logistic\nparams = 4\nell = 2\n")
    assert cfg.family == "logistic" and cfg.params == (4.0,) and cfg.ell == 2.0
    assert cfg.stages == STAGES and cfg.seed == 0


def test_parse_comments_and_stage_order():
    cfg = parse_config("# header\nmap = logistic  # family\nparams = 4\nell = 2\n\n"
                       "stages = clt, analyze\n")
    assert cfg.stages == ("analyze", "clt")


@pytest.mark.parametrize("text", [
    "params = 4\nell = 2\n",
    "map = logistic\nparams = 4\n",
    "map = logistic\nparams = 4\nell = 2\ncolour = red\n",
    "map = logistic\nparams = 4\nell = 2\nell = 3\n",
    "map = logistic\nparams = 4\nell = 1\n",
    "map = logistic\nparams = 4\nell = 2\nseed = -1\n",
    "map = logistic\nparams = 4\nell = 2\nN = 0\n",
    "map = logistic\nparams = 4 5\nell = 2\n",
    "map = logistic\nparams = 4\nell = 2\nstages = tower\n",
    "map = logistic\nparams = 4\nell = 2\nstages = magic\n",
    "map = nosuchmap\nparams = 4\nell = 2\n",
    "map = logistic\nparams = 4\nell = 2\nfibonacci = maybe\n",
    "map = logistic\nparams = 4\nell = 2\nno equals sign\n",
])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_output_dir_env(tmp_path, monkeypatch):
    path = write(tmp_path, "map = logistic\nparams = 4\nell = 2\nout = a\n")
    monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / "env"))
    assert load_config(path).out == str(tmp_path / "env")
    assert load_config(path, out="cli").out == "cli"
    assert load_config(path, seed=9).seed == 9


def test_exit_config_missing_ell(tmp_path):
    path = write(tmp_path, "map = logistic\nparams = 4\n")
    assert run(["all", "--config", path]) == EXIT_CONFIG


def test_exit_config_bad_arguments(tmp_path):
    assert run(["bogus", "--config", "x"]) == EXIT_CONFIG
    assert run(["all", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_exit_hypothesis_renormalizable(tmp_path, capsys):
    path = write(tmp_path, "map = logistic\nparams = 3.2\nell = 2\nstages = induce\n")
    assert run(["induce", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_HYPOTHESIS
    assert "hypothesis violated" in capsys.readouterr().err


def test_report_without_summary(tmp_path):
    path = write(tmp_path, SMALL)
    assert run(["report", "--config", path, "--out", str(tmp_path / "none")]) == EXIT_INTERNAL


def test_small_run_and_report(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    out = tmp_path / "o"
    assert run(["all", "--config", path, "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert set(SUMMARY_KEYS) <= set(summary)
    assert summary["star_verdict"] == "converged"
    assert summary["stages"] == ["analyze", "corr", "clt"]
    for name in ("critical_c0.csv", "corr.csv", "density.csv"):
        assert (out / name).exists()
    capsys.readouterr()
    assert run(["report", "--config", path, "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out == format_report(summary)


def test_small_run_reproducible(tmp_path):
    path = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["all", "--config", path, "--out", str(a), "--threads", "1"]) == EXIT_OK
    assert run(["all", "--config", path, "--out", str(b), "--threads", "1"]) == EXIT_OK
    for name in ("critical_c0.csv", "corr.csv", "density.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_flag_changes_output(tmp_path):
    path = write(tmp_path, SMALL.replace("stages = analyze, corr, clt", "stages = corr"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["corr", "--config", path, "--out", str(a)]) == EXIT_OK
    assert run(["corr", "--config", path, "--out", str(b), "--seed", "4"]) == EXIT_OK
    assert (a / "corr.csv").read_bytes() != (b / "corr.csv").read_bytes()
