import hashlib
import json
import math

import numpy as np
import pytest
from scipy import integrate

from voi import evppi, pipeline
from voi.distributions import Beta, LogNormal
from voi.errors import ConfigError, SchemaError


def small_project(synthetic_dir, **overrides):
    raw = json.loads((synthetic_dir / "project.json").read_text())
    raw.update({"samples": 1000, "bootstrap": 20, "mcmc": {"chains": 4, "iterations": 3000}})
    raw.update(overrides)
    return raw


@pytest.fixture(scope="module")
def runs(synthetic_dir, tmp_path_factory):
    raw = small_project(synthetic_dir)
    out = []
    for label in ("a", "b"):
        project = pipeline.project_from_dict(raw, synthetic_dir)
        out.append(pipeline.run_pipeline(project, tmp_path_factory.mktemp(label)))
    return out


def test_run_is_byte_identical(runs):
    a, b = runs
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma == mb
    for rel in ("prior/samples.csv", "prior/evppi_report.csv", "updated/samples.csv", "selection.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_manifest_contents(runs, synthetic_dir):
    run = runs[0]
    m = json.loads((run / "manifest.json").read_text())
    assert m["seed"] == json.loads((synthetic_dir / "project.json").read_text())["seed"]
    assert len(m["config_hash"]) == 64
    assert {"numpy", "scipy", "python", "artifact"} <= set(m["versions"])
    for rel, digest in m["artifacts"].items():
        assert hashlib.sha256((run / rel).read_bytes()).hexdigest() == digest


def test_selection_and_update(runs):
    run = runs[0]
    sel = json.loads((run / "selection.json").read_text())
    assert sel["total_cost"] <= sel["budget"]
    assert sel["updated"] == [n for n in sel["updated"] if n in sel["selected"]]
    assert (run / "updates" / "diagnostics.json").is_file()
    comparison = json.loads((run / "comparison.json").read_text())
    if sel["updated"]:
        assert comparison["updated_sd"] < comparison["prior_sd"]


def test_report_rows_consistent(runs):
    rows = evppi.read_report_csv(runs[0] / "prior" / "evppi_report.csv")
    assert len(rows) == 9
    summary = json.loads((runs[0] / "prior" / "summary.json").read_text())
    sigma = summary["deaths_averted:sp2040"]["sd"]
    for r in rows:
        assert r["sd_reduction"] == pytest.approx(sigma * (1 - math.sqrt(1 - r["pct_explained"] / 100)), abs=5e-4)


def test_report_table_order_and_densities(runs, tmp_path):
    written = pipeline.report(runs[0], tmp_path)
    lines = (tmp_path / "table.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == list(evppi.TABLE_ORDER)
    assert evppi.UPPER_BOUND_NOTE in (tmp_path / "table.txt").read_text()
    for name in ("zeta", "eta"):
        header = (tmp_path / f"density_{name}.csv").read_text().splitlines()[0]
        assert header == "x,prior_density,posterior_density"
    assert "table_updated.csv" in written


def test_density_prior_only():
    text = pipeline.density_table(Beta(2, 3))
    lines = text.splitlines()
    assert lines[0] == "x,prior_density" and len(lines) == pipeline.DENSITY_POINTS + 1
    x, d = np.array([ln.split(",") for ln in lines[1:]], dtype=float).T
    assert integrate.trapezoid(d, x) == pytest.approx(1.0, abs=0.01)


def test_density_with_posterior_pool():
    pool = np.random.default_rng(0).lognormal(3.0, 0.2, 4000)
    lines = pipeline.density_table(LogNormal(3.0, 1.0), pool).splitlines()
    x, prior, post = np.array([ln.split(",") for ln in lines[1:]], dtype=float).T
    assert x.min() <= pool.min() and x.max() >= pool.max()
    assert post.max() > prior.max()


def test_report_missing_artifacts(tmp_path):
    with pytest.raises(ConfigError):
        pipeline.report(tmp_path)


def test_config_errors(synthetic_dir, tmp_path):
    raw = small_project(synthetic_dir)
    bad = dict(raw, budget=-1)
    with pytest.raises(SchemaError):
        pipeline.project_from_dict(bad, synthetic_dir)
    with pytest.raises(ConfigError):
        pipeline.project_from_dict(dict(raw, scenario="nowhere"), synthetic_dir)
    with pytest.raises(ConfigError):
        pipeline.project_from_dict(dict(raw, outputs={"deaths_averted:nowhere": 1.0}), synthetic_dir)
    catalog = dict(raw["catalog"])
    del catalog["eta"]
    with pytest.raises(ConfigError):
        pipeline.project_from_dict(dict(raw, catalog=catalog), synthetic_dir)
    path = tmp_path / "p.json"
    path.write_text('{\n  "tables": {},\n  "budget": 10,\n')
    with pytest.raises(SchemaError) as info:
        pipeline.load_project(path)
    assert info.value.line is not None


def test_schema_error_reports_line(synthetic_dir, tmp_path):
    raw = small_project(synthetic_dir)
    raw["budget"] = "ten"
    path = tmp_path / "project.json"
    path.write_text(json.dumps(raw, indent=2))
    with pytest.raises(SchemaError) as info:
        pipeline.load_project(path)
    lines = path.read_text().splitlines()
    assert '"budget"' in lines[info.value.line - 1]


def test_overrides(synthetic_dir):
    p = pipeline.project_from_dict(small_project(synthetic_dir), synthetic_dir, seed=5, samples=300)
    assert p.seed == 5 and p.samples == 300 and p.raw["seed"] == 5
