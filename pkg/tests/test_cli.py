import json

import pytest

from voi import bayes, cli, pipeline
from voi.errors import ConvergenceError, ModelEvaluationError


@pytest.fixture(scope="module")
def config(synthetic_dir, tmp_path_factory):
    raw = json.loads((synthetic_dir / "project.json").read_text())
    raw.update({"samples": 600, "bootstrap": 10, "mcmc": {"chains": 4, "iterations": 2000}})
    for t in raw["tables"]:
        if t != "baseline":
            raw["tables"][t] = str(synthetic_dir / raw["tables"][t])
    for spec in raw["updates"].values():
        for key in ("studies", "cities"):
            if key in spec:
                spec[key] = str(synthetic_dir / spec[key])
    path = tmp_path_factory.mktemp("cfg") / "project.json"
    path.write_text(json.dumps(raw, indent=2))
    return path


def test_stepwise_commands(config, tmp_path, capsys):
    out = str(tmp_path)
    base = ["--config", str(config), "--out", out]
    assert cli.main(["simulate", *base]) == 0
    assert (tmp_path / "samples.csv").is_file()
    assert cli.main(["evppi", *base]) == 0
    assert "EVPPI is the variance reduction" in capsys.readouterr().out
    assert cli.main(["prioritize", *base, "--budget", "5"]) == 0
    sel = json.loads((tmp_path / "selection.json").read_text())
    assert sel["total_cost"] <= 5
    assert cli.main(["update-meta", *base]) == 0
    assert (tmp_path / "posterior_zeta.csv").is_file()
    assert cli.main(["update-hier", *base]) == 0
    assert (tmp_path / "posterior_eta.csv").is_file()


def test_run_and_report(config, tmp_path, capsys):
    assert cli.main(["run", "--config", str(config), "--out", str(tmp_path)]) == 0
    assert "prior output sd" in capsys.readouterr().out
    assert cli.main(["report", "--run", str(tmp_path)]) == 0
    assert "parameter" in capsys.readouterr().out
    assert (tmp_path / "report" / "table.csv").is_file()


def test_config_errors_exit_2(tmp_path, config, capsys):
    assert cli.main(["simulate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"tables": 1}')
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["evppi", "--input", str(tmp_path / "missing.csv")]) == 2
    assert cli.main(["update-hier", "--config", str(config), "--out", str(tmp_path), "--target", "atlantis"]) == 2
    assert "error:" in capsys.readouterr().err


def test_convergence_failure_exit_3(config, tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise ConvergenceError("MCMC did not converge: zeta (R-hat 1.200, ESS 40)", {})

    monkeypatch.setattr(bayes, "meta_analysis_zeta", fail)
    assert cli.main(["update-meta", "--config", str(config), "--out", str(tmp_path)]) == 3


def test_model_error_exit_4(config, tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise ModelEvaluationError(12, {"eta": -1.0}, "negative concentration")

    monkeypatch.setattr(pipeline, "simulate", fail)
    assert cli.main(["simulate", "--config", str(config), "--out", str(tmp_path)]) == 4


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("simulate", "evppi", "update-meta", "update-hier", "prioritize", "report", "run"):
        assert cmd in text
