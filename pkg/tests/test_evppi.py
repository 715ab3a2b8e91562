import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voi import evppi
from voi.distributions import Rng
from voi.engine import SampleMatrix
from voi.errors import ParameterDomainError, SchemaError
from voi.evppi import DecisionProblem, evppi_all, evppi_decision, evppi_estimation

R = 10_000


def linear_gaussian(seed=0, R=R):
    gen = np.random.default_rng(seed)
    x1 = gen.normal(0, 1, R)
    x2 = gen.normal(0, 2, R)
    dummy = gen.uniform(size=R)
    return SampleMatrix({"x1": x1, "x2": x2, "dummy": dummy}, {"y:1": x1 + x2})


@pytest.fixture(scope="module")
def lg():
    return linear_gaussian()


def test_linear_gaussian(lg):
    e1 = evppi_estimation(lg, "x1", "y:1", bootstrap=0)
    e2 = evppi_estimation(lg, "x2", "y:1", bootstrap=0)
    assert e1.evppi_abs == pytest.approx(1.0, rel=0.1)
    assert e2.evppi_abs == pytest.approx(4.0, rel=0.1)


def test_linear_gaussian_across_seeds():
    # sampling noise in var(Y) alone moves the estimate by ~0.04; nearly every seed lands inside
    inside = 0
    for seed in range(20):
        m = linear_gaussian(seed)
        e1 = evppi_estimation(m, "x1", "y:1", bootstrap=0).evppi_abs
        e2 = evppi_estimation(m, "x2", "y:1", bootstrap=0).evppi_abs
        inside += (0.9 <= e1 <= 1.1) and (3.6 <= e2 <= 4.4)
    assert inside >= 18


def test_sole_driver_and_dummy():
    gen = np.random.default_rng(1)
    x = gen.normal(size=R)
    d = gen.normal(size=R)
    m = SampleMatrix({"x": x, "d": d}, {"y:1": x**2})
    var_y = m.outputs["y:1"].var(ddof=1)
    assert evppi_estimation(m, "x", "y:1", bootstrap=0).evppi_abs >= 0.95 * var_y
    assert evppi_estimation(m, "d", "y:1", bootstrap=0).evppi_abs <= 0.02 * var_y


def test_constant_target_or_output():
    m = SampleMatrix({"c": np.ones(500), "x": np.arange(500.0)}, {"y:1": np.arange(500.0), "z:1": np.full(500, 2.0)})
    e = evppi_estimation(m, "c", "y:1", bootstrap=10)
    assert e.evppi_abs == 0 and e.bootstrap_se == 0
    assert evppi_estimation(m, "x", "z:1", bootstrap=0).evppi_abs == 0


def test_representations_are_consistent(lg):
    for target in ("x1", "x2", "dummy"):
        e = evppi_estimation(lg, target, "y:1", bootstrap=0)
        sigma = math.sqrt(e.var_y)
        assert e.sd_reduction == pytest.approx(sigma * (1 - math.sqrt(1 - e.pct_explained / 100)), abs=1e-9)
        assert 0 <= e.evppi_abs <= e.var_y


def test_clamping_keeps_raw_value():
    gen = np.random.default_rng(3)
    m = SampleMatrix({"d": gen.normal(size=2000)}, {"y:1": gen.normal(size=2000)})
    e = evppi_estimation(m, "d", "y:1", bootstrap=50, rng=Rng(3))
    assert e.evppi_abs == max(e.evppi_raw, 0.0)
    if e.evppi_raw < 0:
        assert -e.evppi_raw <= 3 * e.bootstrap_se


def test_bootstrap_se_is_reasonable(lg):
    e = evppi_estimation(lg.take(np.arange(4000)), "x1", "y:1", bootstrap=100, rng=Rng(1))
    # delta-method scale: sd of var estimate for a 1-variance Gaussian piece is ~sqrt(2/R)
    assert 0.3 * math.sqrt(2 / 4000) < e.bootstrap_se < 5 * math.sqrt(2 * 5**2 / 4000)


def test_bootstrap_is_seeded(lg):
    m = lg.take(np.arange(2000))
    a = evppi_estimation(m, "x1", "y:1", bootstrap=30, rng=Rng(5)).bootstrap_se
    b = evppi_estimation(m, "x1", "y:1", bootstrap=30, rng=Rng(5)).bootstrap_se
    assert a == b


def test_scale_equivariance(lg):
    m = lg.take(np.arange(3000))
    scaled = SampleMatrix(m.params, {"y:1": 7.0 * m.outputs["y:1"]})
    a = evppi_estimation(m, "x1", "y:1", bootstrap=0)
    b = evppi_estimation(scaled, "x1", "y:1", bootstrap=0)
    assert b.evppi_abs == pytest.approx(49.0 * a.evppi_abs, rel=1e-6)
    assert b.pct_explained == pytest.approx(a.pct_explained, rel=1e-6)


def test_monotone_grouping():
    gen = np.random.default_rng(4)
    x1, x2 = gen.normal(size=(2, 4000))
    m = SampleMatrix({"x1": x1, "x2": x2}, {"y:1": np.sin(x1) + x1 * x2 + 0.5 * gen.normal(size=4000)})
    rng = Rng(4)
    e1 = evppi_estimation(m, "x1", "y:1", bootstrap=50, rng=rng)
    e2 = evppi_estimation(m, "x2", "y:1", bootstrap=50, rng=rng)
    e12 = evppi_estimation(m, ["x1", "x2"], "y:1", bootstrap=50, rng=rng)
    assert e12.evppi_abs >= max(e1.evppi_abs, e2.evppi_abs) - 3 * e12.bootstrap_se


def test_row_shuffle_invariance(lg):
    m = lg.take(np.arange(2000))
    perm = np.random.default_rng(0).permutation(2000)
    a = evppi_estimation(m, "x2", "y:1", bootstrap=0).evppi_abs
    b = evppi_estimation(m.take(perm), "x2", "y:1", bootstrap=0).evppi_abs
    assert b == pytest.approx(a, rel=1e-6)


def test_simplex_group_uses_all_but_last_coordinate():
    gen = np.random.default_rng(5)
    a = gen.dirichlet((32, 4, 4, 60), 2000)
    params = {f"alpha_{k}": a[:, j] for j, k in enumerate(["bus", "car", "goods", "motorbike"])}
    m = SampleMatrix(params, {"y:1": 3 * a[:, 0] + a[:, 2] + 0.01 * gen.normal(size=2000)})
    name, cols = evppi.resolve_target(m, "alpha")
    assert name == "alpha" and cols == ["alpha_bus", "alpha_car", "alpha_goods"]
    e = evppi_estimation(m, "alpha", "y:1", bootstrap=0)
    assert e.pct_explained > 95


def test_unknown_target_or_output(lg):
    with pytest.raises(KeyError):
        evppi_estimation(lg, "nope", "y:1", bootstrap=0)
    with pytest.raises(KeyError):
        evppi_estimation(lg, "x1", "nope", bootstrap=0)


# -- decision form -------------------------------------------------------------


def symmetric_problem(seed, noise_sd=0.0, R=R):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=R)
    y = x + noise_sd * gen.normal(size=R)
    m = SampleMatrix({"x": x, "u": gen.uniform(size=R)}, {"y:1": y})
    return m, DecisionProblem(np.column_stack([y, -y]))


def test_decision_identical_losses_zero():
    m, _ = symmetric_problem(0, R=1000)
    L = np.column_stack([m.params["x"]] * 2)
    assert evppi_decision(DecisionProblem(L), m, "x", bootstrap=0).evppi_abs == pytest.approx(0.0, abs=1e-9)


def test_decision_symmetric_matches_analytic():
    m, p = symmetric_problem(1)
    e = evppi_decision(p, m, "x", bootstrap=0)
    assert e.evppi_abs == pytest.approx(math.sqrt(2 / math.pi), rel=0.1)
    assert e.units == "loss"


def test_decision_independent_target_near_zero():
    m, p = symmetric_problem(2)
    e = evppi_decision(p, m, "u", bootstrap=0)
    assert e.evppi_abs < 0.05


@pytest.mark.parametrize("variant,noise", [("literal", 0.0), ("noisy", 1.0)])
def test_decision_agrees_with_nested_mc(frozen, variant, noise):
    oracle = frozen["decision_nested_mc"][variant]
    m, p = symmetric_problem(3, noise_sd=noise)
    e = evppi_decision(p, m, "x", bootstrap=100, rng=Rng(3))
    combined = math.sqrt(e.bootstrap_se**2 + oracle["se"] ** 2)
    assert abs(e.evppi_abs - oracle["evppi"]) <= 3 * combined


def test_decision_from_net_benefit():
    m, p = symmetric_problem(4, R=2000)
    q = DecisionProblem.from_net_benefit(-p.losses, ("a", "b"))
    a = evppi_decision(p, m, "x", bootstrap=0).evppi_abs
    b = evppi_decision(q, m, "x", bootstrap=0).evppi_abs
    assert a == b


def test_decision_problem_validation():
    with pytest.raises(ParameterDomainError):
        DecisionProblem(np.ones((10, 1)))
    with pytest.raises(ParameterDomainError):
        DecisionProblem(np.array([[1.0, np.inf]]))
    m, _ = symmetric_problem(0, R=500)
    with pytest.raises(ParameterDomainError):
        evppi_decision(DecisionProblem(np.ones((10, 2))), m, "x", bootstrap=0)


# -- all parameters -------------------------------------------------------------


def test_evppi_all_ranks_dominant_first():
    gen = np.random.default_rng(6)
    x = gen.normal(size=2000)
    m = SampleMatrix({"x": x, "c": np.ones(2000), "d": gen.normal(size=2000)}, {"y:1": 5 * x})
    ranked = evppi_all(m, "y:1", bootstrap=0)
    assert ranked[0].target == "x" and ranked[0].pct_explained == pytest.approx(100, abs=0.1)
    assert [e.evppi_abs for e in ranked] == sorted((e.evppi_abs for e in ranked), reverse=True)


def test_evppi_all_constant_parameters():
    m = SampleMatrix({"a": np.ones(500), "b": np.full(500, 2.0)}, {"y:1": np.arange(500.0)})
    assert all(e.evppi_abs == 0 for e in evppi_all(m, "y:1", bootstrap=0))


def test_evppi_all_weighted_outputs_sum(lg):
    m = lg.take(np.arange(2000))
    y = m.outputs["y:1"]
    two = SampleMatrix(m.params, {"y:1": y, "y:2": y})
    single = {e.target: e.evppi_abs for e in evppi_all(m, "y:1", bootstrap=0)}
    double = {e.target: e for e in evppi_all(two, {"y:1": 1, "y:2": 2}, bootstrap=0)}
    for k, v in single.items():
        assert double[k].evppi_abs == pytest.approx(3 * v, rel=1e-9)
        assert double[k].var_y == pytest.approx(3 * y.var(ddof=1))


def test_evppi_all_thread_invariance(lg):
    m = lg.take(np.arange(2000))
    a = evppi_all(m, "y:1", bootstrap=20, rng=Rng(2), threads=1)
    b = evppi_all(m, "y:1", bootstrap=20, rng=Rng(2), threads=3)
    assert [(e.target, e.evppi_abs, e.bootstrap_se) for e in a] == [(e.target, e.evppi_abs, e.bootstrap_se) for e in b]


def test_dummy_column_has_negligible_evppi(tables, curves):
    from test_engine import prior_dists
    from voi.engine import propagate

    m = propagate(prior_dists(), tables, curves, R=3000, rng=1)
    params = dict(m.params)
    params["dummy"] = np.random.default_rng(0).uniform(size=m.R)
    m = SampleMatrix(params, m.outputs)
    out = next(o for o in m.outputs if o.startswith("deaths_averted:"))
    e = evppi_estimation(m, "dummy", out, bootstrap=0)
    assert e.pct_explained < 2.0


def test_report_rows_follow_table_order_and_formula(tmp_path, lg):
    m = lg.take(np.arange(1000))
    ests = evppi.table_order(evppi_all(m, "y:1", bootstrap=10, rng=Rng(0)))
    text = evppi.report_csv(ests, {"x1": 5.0}, tmp_path / "r.csv")
    rows = evppi.read_report_csv(tmp_path / "r.csv")
    assert text.splitlines()[0].split(",") == list(evppi.REPORT_COLUMNS)
    assert {r["parameter"] for r in rows} == {"x1", "x2", "dummy"}
    sigma = math.sqrt(m.outputs["y:1"].var(ddof=1))
    for r in rows:
        expected = sigma * (1 - math.sqrt(1 - r["pct_explained"] / 100))
        assert round(r["sd_reduction"], 3) == round(expected, 3)
    assert next(r for r in rows if r["parameter"] == "x1")["cost_person_days"] == 5.0


def test_table_order():
    ests = [evppi.EvppiEstimate(n, (n,), 1.0, 1.0, 2.0) for n in ("zz", "xi_copd", "eta", "alpha")]
    assert [e.target for e in evppi.table_order(ests)] == ["eta", "alpha", "xi_copd", "zz"]


def test_read_report_errors(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n")
    with pytest.raises(SchemaError):
        evppi.read_report_csv(p)
    p.write_text(",".join(evppi.REPORT_COLUMNS) + "\nx,1,2,abc,,\n")
    with pytest.raises(SchemaError) as info:
        evppi.read_report_csv(p)
    assert info.value.line == 2


@settings(max_examples=10)
@given(st.floats(0.1, 100), st.integers(0, 10_000))
def test_scale_equivariance_property(c, seed):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=500)
    y = np.tanh(x) + 0.3 * gen.normal(size=500)
    a = evppi_estimation(SampleMatrix({"x": x}, {"y:1": y}), "x", "y:1", bootstrap=0)
    b = evppi_estimation(SampleMatrix({"x": x}, {"y:1": c * y}), "x", "y:1", bootstrap=0)
    assert b.evppi_abs == pytest.approx(c * c * a.evppi_abs, rel=1e-6, abs=1e-9 * c * c)
    assert b.pct_explained == pytest.approx(a.pct_explained, rel=1e-6, abs=1e-7)
