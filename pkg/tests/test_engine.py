import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voi import engine, model
from voi.distributions import Beta, Constant, Dirichlet, LogNormal, Normal, Rng
from voi.engine import SampleMatrix, generalized_variance, propagate, summarize, summarize_column
from voi.errors import ConfigError, ModelEvaluationError, SchemaError


def prior_dists():
    return {
        "eta": LogNormal(3.0, 1.0),
        "zeta": Beta(2.0, 3.0),
        "alpha": Dirichlet((32, 4, 4, 60), ("car", "bus", "motorbike", "goods")),
        "lambda_walk": LogNormal(1.0, 0.4),
        "lambda_cycle": LogNormal(2.0, 0.3),
        "xi_copd": LogNormal(0.0, 0.3),
        "xi_lc": LogNormal(0.0, 0.3),
        "xi_stroke": LogNormal(0.0, 0.3),
        "xi_ihd": LogNormal(0.0, 0.3),
    }


def constant_prior():
    x = model.ParameterVector(20.0, 0.4, {m: 0.25 for m in model.MOTORIZED}, 2.0, 5.0,
                              {d: 1.0 for d in ("copd", "lc", "stroke", "ihd")})
    return engine.constant_dists(x)


def test_all_constants_give_identical_rows(tables, curves):
    m = propagate(constant_prior(), tables, curves, R=1000, rng=1)
    for col in (*m.params.values(), *m.outputs.values()):
        assert np.all(col == col[0])
    assert all(s.variance == 0 for s in summarize(m).values())


def test_baseline_tables_give_zero_averted(tables, curves):
    dists = constant_prior()
    dists["zeta"] = Beta(2, 3)
    same = tables.with_scenario_as_baseline(tables.scenarios[1])
    m = propagate(dists, same, curves, R=1000, rng=2)
    assert np.all(m.outputs[f"deaths_averted:{tables.scenarios[1]}"] == 0)


def test_propagate_is_deterministic(tables, curves):
    a = propagate(prior_dists(), tables, curves, R=5000, rng=7)
    b = propagate(prior_dists(), tables, curves, R=5000, rng=7)
    assert a.to_csv() == b.to_csv()


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_thread_count_invariance(tables, curves, threads):
    a = propagate(prior_dists(), tables, curves, R=2100, rng=3, threads=1)
    b = propagate(prior_dists(), tables, curves, R=2100, rng=3, threads=threads)
    assert a.to_csv() == b.to_csv()


def test_row_count_prefix_stability(tables, curves):
    # blocks depend only on their index, so a longer run extends a shorter one
    a = propagate(prior_dists(), tables, curves, R=1000, rng=4)
    b = propagate(prior_dists(), tables, curves, R=1500, rng=4)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k][:1000])


def test_rows_come_from_one_joint_draw(tables, curves):
    m = propagate(prior_dists(), tables, curves, R=1000, rng=5)
    alpha = np.column_stack([m.params[f"alpha_{k}"] for k in model.MOTORIZED])
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-12)
    for r in (0, 499, 999):
        x = model.ParameterVector(
            m.params["eta"][r], m.params["zeta"][r], {k: m.params[f"alpha_{k}"][r] for k in model.MOTORIZED},
            m.params["lambda_walk"][r], m.params["lambda_cycle"][r],
            {d: m.params[f"xi_{d}"][r] for d in ("copd", "lc", "stroke", "ihd")})
        out = model.evaluate(tables, curves, x)
        for j, s in enumerate(tables.scenarios):
            assert m.outputs[f"deaths:{s}"][r] == pytest.approx(out.deaths[j], rel=1e-12)


def test_column_order_parameters_alphabetical_then_outputs(tables, curves):
    m = propagate(prior_dists(), tables, curves, R=1000, rng=6)
    header = m.to_csv().splitlines()[0].split(",")
    n = len(m.params)
    assert header[:n] == sorted(header[:n])
    assert all(":" in h for h in header[n:])


def test_csv_round_trip(tmp_path, tables, curves):
    m = propagate(prior_dists(), tables, curves, R=1000, rng=8)
    path = tmp_path / "samples.csv"
    m.to_csv(path)
    back = SampleMatrix.from_csv(path)
    assert back.to_csv() == m.to_csv()


def test_csv_errors_are_line_numbered(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("a,deaths:x\n1,2\n3\n")
    with pytest.raises(SchemaError) as info:
        SampleMatrix.from_csv(p)
    assert info.value.line == 3


def test_model_error_reports_row_and_values(tables, curves):
    dists = prior_dists()
    dists["zeta"] = Normal(0.5, 0.5)
    with pytest.raises(ModelEvaluationError) as info:
        propagate(dists, tables, curves, R=1000, rng=9)
    err = info.value
    assert 0 <= err.row < 1000
    assert not 0 <= err.draw["zeta"] <= 1


def test_missing_parameter_is_config_error(tables, curves):
    dists = prior_dists()
    del dists["xi_ihd"]
    with pytest.raises(ConfigError):
        propagate(dists, tables, curves, R=1000)


def test_small_R_warns(tables, curves, caplog):
    propagate(constant_prior(), tables, curves, R=200)
    assert any("below 1000" in r.message for r in caplog.records)


def test_summarize_examples():
    s = summarize_column([1.0, 2.0, 3.0])
    assert (s.mean, s.variance) == (2.0, 1.0)
    c = summarize_column(np.full(10, 4.0))
    assert c.variance == 0 and c.mcse_mean == 0


def test_summarize_large_normal():
    y = Normal(0, 2).draw(Rng(1).generator(), 1_000_000)
    s = summarize_column(y)
    assert s.variance == pytest.approx(4.0, abs=0.03)
    assert s.sd == math.sqrt(s.variance)
    assert s.mcse_mean == pytest.approx(s.sd / 1000.0)


def test_summary_json(tmp_path, tables, curves):
    m = propagate(prior_dists(), tables, curves, R=1000, rng=10)
    engine.write_summary(summarize(m), tmp_path / "summary.json")
    data = json.loads((tmp_path / "summary.json").read_text())
    assert set(data) == set(m.outputs)
    assert data[next(iter(m.outputs))]["R"] == 1000


def test_generalized_variance_examples():
    y = np.arange(10.0)
    m = SampleMatrix({"x": y}, {"a:1": y, "b:1": y})
    assert generalized_variance(m, {"a:1": 1}) == pytest.approx(y.var(ddof=1))
    assert generalized_variance(m, {"a:1": 1, "b:1": 1}) == pytest.approx(2 * y.var(ddof=1))
    m2 = SampleMatrix({"x": y}, {"a:1": y, "b:1": y**3})
    assert generalized_variance(m2, {"a:1": 1, "b:1": 0}) == y.var(ddof=1)


def test_generalized_variance_errors():
    m = SampleMatrix({"x": np.arange(5.0)}, {"a:1": np.arange(5.0)})
    with pytest.raises(ConfigError):
        generalized_variance(m, {"zzz": 1})
    with pytest.raises(ConfigError):
        generalized_variance(m, {"a:1": 0})
    with pytest.raises(ConfigError):
        generalized_variance(m, {"a:1": -1})


def test_sample_matrix_rejects_ragged_or_missing():
    with pytest.raises(ValueError):
        SampleMatrix({"x": np.arange(5.0)}, {"y:1": np.arange(4.0)})
    with pytest.raises(ValueError):
        SampleMatrix({"x": np.array([1.0, np.nan])}, {"y:1": np.arange(2.0)})


@given(st.integers(0, 2**32 - 1))
def test_joint_row_shuffle_leaves_summaries_invariant(seed):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=300)
    m = SampleMatrix({"x": x}, {"y:1": x**2 + gen.normal(size=300)})
    perm = gen.permutation(300)
    a, b = summarize(m)["y:1"], summarize(m.take(perm))["y:1"]
    assert b.mean == pytest.approx(a.mean, rel=1e-12, abs=1e-12)
    assert b.variance == pytest.approx(a.variance, rel=1e-12)


def test_constant_distribution_matches_scalar():
    x = Constant(2.5).draw(Rng(0).generator(), 4)
    assert x.tolist() == [2.5] * 4
