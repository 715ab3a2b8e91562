"""Pollution pathway of the transport health impact model.

Maps one realisation of the uncertain parameters (background PM2.5, traffic
share, per-mode emission shares, walking/cycling MMET and dose-response
scalings) plus constant travel, population and burden tables to deaths per
scenario.  Every stage broadcasts over leading batch axes, so the Monte Carlo
engine evaluates a whole block of draws in one call.

Array layouts
-------------
travel      ``(A, G, M, S)`` minutes per day
population  ``(A, G)``
burden      ``(A, D, G)`` deaths per year
exposure    ``(..., A, G, S)``
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .csvio import read_table
from .errors import (
    DivisionDegeneracyError,
    InfeasibleScheduleError,
    ParameterDomainError,
    SchemaError,
)

log = logging.getLogger(__name__)

MODES = ("walk", "cycle", "bus", "car", "motorbike", "goods")
MOTORIZED = ("bus", "car", "motorbike", "goods")
DISEASES = ("alri", "copd", "lc", "stroke", "ihd")
MINUTES_PER_DAY = 1440.0
FIXED_VENTILATION = {"bus": 1.5, "car": 1.5, "motorbike": 2.0, "goods": 1.5}
_MOTOR_IDX = [MODES.index(m) for m in MOTORIZED]


@dataclass(frozen=True, eq=False)
class ConstantTables:
    ages: tuple
    genders: tuple
    scenarios: tuple
    baseline: str
    travel: np.ndarray
    population: np.ndarray
    burden: np.ndarray
    diseases: tuple = DISEASES

    def __post_init__(self):
        travel = np.array(self.travel, dtype=float)
        population = np.array(self.population, dtype=float)
        burden = np.array(self.burden, dtype=float)
        A, G, S, D = len(self.ages), len(self.genders), len(self.scenarios), len(self.diseases)
        if travel.shape != (A, G, len(MODES), S):
            raise ParameterDomainError("travel", travel.shape, f"expected shape {(A, G, len(MODES), S)}")
        if population.shape != (A, G):
            raise ParameterDomainError("population", population.shape, f"expected shape {(A, G)}")
        if burden.shape != (A, D, G):
            raise ParameterDomainError("burden", burden.shape, f"expected shape {(A, D, G)}")
        if self.baseline not in self.scenarios:
            raise ParameterDomainError("baseline", self.baseline, "not among scenarios")
        unknown = set(self.diseases) - set(DISEASES)
        if unknown:
            raise ParameterDomainError("diseases", sorted(unknown), f"must be drawn from {DISEASES}")
        for name, arr in (("travel", travel), ("population", population), ("burden", burden)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ParameterDomainError(name, "negative or non-finite", "entries must be >= 0")
        check_schedule(travel, self.ages, self.genders, self.scenarios)
        for arr in (travel, population, burden):
            arr.setflags(write=False)
        object.__setattr__(self, "travel", travel)
        object.__setattr__(self, "population", population)
        object.__setattr__(self, "burden", burden)

    @property
    def baseline_index(self) -> int:
        return self.scenarios.index(self.baseline)

    def total_burden(self) -> float:
        return float(np.ascontiguousarray(self.burden).reshape(-1).sum())

    def with_scenario_as_baseline(self, scenario) -> "ConstantTables":
        """Copy in which ``scenario``'s travel equals the baseline's."""
        travel = self.travel.copy()
        travel[..., self.scenarios.index(scenario)] = travel[..., self.baseline_index]
        return ConstantTables(self.ages, self.genders, self.scenarios, self.baseline,
                              travel, self.population, self.burden, self.diseases)


def check_schedule(travel, ages, genders, scenarios):
    total = travel.sum(axis=2)
    over = np.argwhere(total > MINUTES_PER_DAY)
    if over.size:
        a, g, s = over[0]
        raise InfeasibleScheduleError(ages[a], genders[g], scenarios[s], float(total[a, g, s]))


class DoseResponseCurve:
    """Relative risk as a function of exposure, ``H(0) == 1``, non-decreasing."""

    #: exposures above this are clamped (``inf`` for parametric curves)
    max_exposure = math.inf

    def __call__(self, x):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TabulatedCurve(DoseResponseCurve):
    """Piecewise-linear interpolation through ``(exposure, rr)`` points.

    Exposures above the last point take the last RR (flat extension).
    """

    exposure: np.ndarray
    rr: np.ndarray

    def __post_init__(self):
        x = np.array(self.exposure, dtype=float)
        y = np.array(self.rr, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ParameterDomainError("exposure", x.shape, "need matching 1-d arrays with >= 2 points")
        if x[0] != 0.0:
            raise ParameterDomainError("exposure", x[0], "table must start at exposure 0")
        if abs(y[0] - 1.0) > 1e-9:
            raise ParameterDomainError("rr", y[0], "RR at exposure 0 must be 1")
        if np.any(np.diff(x) <= 0):
            raise ParameterDomainError("exposure", "non-increasing", "exposures must be strictly increasing")
        if np.any(np.diff(y) < 0):
            raise ParameterDomainError("rr", "decreasing", "RR must be non-decreasing")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "exposure", x)
        object.__setattr__(self, "rr", y)

    @property
    def max_exposure(self):
        return float(self.exposure[-1])

    def __call__(self, x):
        return np.interp(x, self.exposure, self.rr)


@dataclass(frozen=True)
class IerCurve(DoseResponseCurve):
    """``1 + alpha * (1 - exp(-gamma * (x - cf) ** delta))`` above ``cf``, else 1."""

    alpha: float
    gamma: float
    delta: float
    cf: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ParameterDomainError("alpha", self.alpha, "must be >= 0")
        for name in ("gamma", "delta"):
            if not getattr(self, name) > 0:
                raise ParameterDomainError(name, getattr(self, name), "must be > 0")
        if not self.cf >= 0:
            raise ParameterDomainError("cf", self.cf, "must be >= 0")

    def __call__(self, x):
        z = np.maximum(np.asarray(x, dtype=float) - self.cf, 0.0)
        return 1.0 + self.alpha * -np.expm1(-self.gamma * z**self.delta)


@dataclass(frozen=True)
class ParameterVector:
    eta: float
    zeta: float
    alpha: Mapping[str, float]
    lambda_walk: float
    lambda_cycle: float
    xi: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.eta >= 0:
            raise ParameterDomainError("eta", self.eta, "must be >= 0")
        if not 0 <= self.zeta <= 1:
            raise ParameterDomainError("zeta", self.zeta, "must lie in [0, 1]")
        if set(self.alpha) != set(MOTORIZED):
            raise ParameterDomainError("alpha", sorted(self.alpha), f"needs exactly {MOTORIZED}")
        a = np.array([self.alpha[m] for m in MOTORIZED], dtype=float)
        if np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
            raise ParameterDomainError("alpha", a.tolist(), "must lie on the simplex")
        for name in ("lambda_walk", "lambda_cycle"):
            if not getattr(self, name) >= 0:
                raise ParameterDomainError(name, getattr(self, name), "must be >= 0")
        for d, v in self.xi.items():
            if d not in DISEASES:
                raise ParameterDomainError(f"xi[{d}]", v, "unknown disease")
            if not v >= 0:
                raise ParameterDomainError(f"xi[{d}]", v, "must be >= 0")
        if self.xi.get("alri", 1.0) != 1.0:
            raise ParameterDomainError("xi[alri]", self.xi["alri"], "fixed at 1")

    def alpha_array(self) -> np.ndarray:
        return np.array([self.alpha[m] for m in MOTORIZED], dtype=float)

    def xi_array(self, diseases=DISEASES) -> np.ndarray:
        return np.array([1.0 if d == "alri" else float(self.xi.get(d, 1.0)) for d in diseases])


@dataclass
class ModelOutput:
    scenarios: tuple
    baseline: str
    deaths: np.ndarray
    deaths_averted: np.ndarray
    breakdown: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def averted(self, scenario):
        return self.deaths_averted[..., self.scenarios.index(scenario)]


def travel_totals(tables: ConstantTables, required_modes=MOTORIZED) -> np.ndarray:
    """Population travel time per mode and scenario, relative to baseline: ``(M, S)``."""
    totals = np.einsum("ag,agms->ms", tables.population, tables.travel)
    base = totals[:, tables.baseline_index]
    rel = np.empty_like(totals)
    for m, mode in enumerate(MODES):
        if base[m] > 0:
            rel[m] = totals[m] / base[m]
        elif mode in required_modes:
            raise DivisionDegeneracyError(mode)
        else:
            rel[m] = np.where(totals[m] > 0, np.inf, 1.0)
    return rel


def pollution_scale(a_hat, alpha, zeta, eta) -> np.ndarray:
    """Background PM2.5 per scenario, ``(..., S)``.

    ``alpha`` is ``(..., 4)`` in :data:`MOTORIZED` order; ``zeta`` and ``eta``
    broadcast against the batch shape.
    """
    alpha = np.asarray(alpha, dtype=float)
    motor = np.asarray(a_hat, dtype=float)[_MOTOR_IDX]
    degenerate = ~np.isfinite(motor).all(axis=1)
    if degenerate.any():
        weights = alpha[..., degenerate]
        if np.any(weights > 0):
            raise DivisionDegeneracyError(MOTORIZED[int(np.flatnonzero(degenerate)[0])])
        motor = np.where(np.isfinite(motor), motor, 0.0)
    p_hat = alpha @ motor
    zeta = np.asarray(zeta, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    return eta * (1.0 - zeta * (1.0 - p_hat))


def mode_ventilation(lambda_walk, lambda_cycle) -> np.ndarray:
    """Ventilation multiplier per mode, ``(..., M)``."""
    lw = np.asarray(lambda_walk, dtype=float)
    lc = np.asarray(lambda_cycle, dtype=float)
    shape = np.broadcast(lw, lc).shape
    v = np.empty(shape + (len(MODES),))
    v[..., 0] = 1.0 + lw
    v[..., 1] = 1.0 + lc
    for mode, value in FIXED_VENTILATION.items():
        v[..., MODES.index(mode)] = value
    return v


def ventilation(tables: ConstantTables, lambda_walk, lambda_cycle) -> np.ndarray:
    """Relative daily ventilation, ``(..., A, G, S)``."""
    check_schedule(tables.travel, tables.ages, tables.genders, tables.scenarios)
    v = mode_ventilation(lambda_walk, lambda_cycle)
    t = tables.travel
    in_traffic = np.einsum("...m,agms->...ags", v, t)
    return (MINUTES_PER_DAY - t.sum(axis=2) + in_traffic) / MINUTES_PER_DAY


def exposure(v_hat, p_bar) -> np.ndarray:
    """Personal exposure, ``(..., A, G, S)``."""
    return np.asarray(v_hat) * np.asarray(p_bar)[..., None, None, :]


def health_impact(v_check, curves: Mapping[str, DoseResponseCurve], xi, tables: ConstantTables,
                  keep_breakdown=False) -> ModelOutput:
    """Scale baseline burden by scenario-to-baseline relative risks.

    ``xi`` is ``(..., D)`` in ``tables.diseases`` order.
    """
    xi = np.asarray(xi, dtype=float)
    v_check = np.asarray(v_check, dtype=float)
    warnings = []
    rr = []
    for d in tables.diseases:
        curve = curves[d]
        above = int(np.count_nonzero(v_check > curve.max_exposure))
        if above:
            msg = f"{above} exposures above the {d} curve range ({curve.max_exposure:g}); RR held flat"
            warnings.append(msg)
        rr.append(curve(v_check))
    h = np.stack(rr, axis=-3)                                   # (..., A, D, G, S)
    h_hat = 1.0 + xi[..., None, :, None, None] * (h - 1.0)
    b = tables.baseline_index
    h_check = h_hat / h_hat[..., b:b + 1]
    u = np.moveaxis(h_check * tables.burden[..., None], -1, -4)  # (..., S, A, D, G)
    u = np.ascontiguousarray(u)
    deaths = u.reshape(u.shape[:-3] + (-1,)).sum(axis=-1)
    averted = deaths[..., b:b + 1] - deaths
    return ModelOutput(
        scenarios=tables.scenarios,
        baseline=tables.baseline,
        deaths=deaths,
        deaths_averted=averted,
        breakdown=np.moveaxis(u, -4, -1) if keep_breakdown else None,
        warnings=warnings,
    )


def evaluate_arrays(tables, curves, eta, zeta, alpha, lambda_walk, lambda_cycle, xi,
                    a_hat=None, keep_breakdown=False) -> ModelOutput:
    """Vectorised model over a batch of draws (leading axes of every argument)."""
    if a_hat is None:
        a_hat = travel_totals(tables)
    p_bar = pollution_scale(a_hat, alpha, zeta, eta)
    v_hat = ventilation(tables, lambda_walk, lambda_cycle)
    v_check = exposure(v_hat, p_bar)
    return health_impact(v_check, curves, xi, tables, keep_breakdown=keep_breakdown)


def evaluate(tables: ConstantTables, curves, x: ParameterVector, keep_breakdown=False) -> ModelOutput:
    """Deaths per scenario for a single parameter vector."""
    out = evaluate_arrays(
        tables, curves, x.eta, x.zeta, x.alpha_array(), x.lambda_walk, x.lambda_cycle,
        x.xi_array(tables.diseases), keep_breakdown=keep_breakdown,
    )
    for msg in out.warnings:
        log.warning(msg)
    return out


# -- file ingestion ---------------------------------------------------------


def _ordered_unique(values):
    seen = {}
    for v in values:
        seen.setdefault(v, None)
    return tuple(seen)


def load_tables(travel_csv, population_csv, burden_csv, baseline="baseline") -> ConstantTables:
    """Read the three constant tables, requiring a complete, duplicate-free grid."""
    travel_rows = read_table(travel_csv, ("a", "g", "m", "s", "minutes"), numeric=("minutes",))
    pop_rows = read_table(population_csv, ("a", "g", "count"), numeric=("count",))
    burden_rows = read_table(burden_csv, ("a", "d", "g", "deaths"), numeric=("deaths",))

    ages = _ordered_unique(r["a"] for _, r in travel_rows)
    genders = _ordered_unique(r["g"] for _, r in travel_rows)
    scenarios = _ordered_unique(r["s"] for _, r in travel_rows)
    if baseline not in scenarios:
        raise SchemaError(travel_csv, None, f"baseline scenario {baseline!r} missing")

    def fill(rows, path, keys, index_sets, value_col):
        arr = np.full(tuple(len(ix) for ix in index_sets), np.nan)
        for lineno, row in rows:
            idx = []
            for key, ix in zip(keys, index_sets):
                if row[key] not in ix:
                    raise SchemaError(path, lineno, f"unknown {key} value {row[key]!r}")
                idx.append(ix.index(row[key]))
            idx = tuple(idx)
            if not np.isnan(arr[idx]):
                raise SchemaError(path, lineno, f"duplicate entry for {tuple(row[k] for k in keys)}")
            if row[value_col] < 0:
                raise SchemaError(path, lineno, f"{value_col} must be >= 0")
            arr[idx] = row[value_col]
        if np.isnan(arr).any():
            missing = tuple(ix[i] for ix, i in zip(index_sets, np.argwhere(np.isnan(arr))[0]))
            raise SchemaError(path, None, f"missing entry for {dict(zip(keys, missing))}")
        return arr

    travel = fill(travel_rows, travel_csv, ("a", "g", "m", "s"), (ages, genders, MODES, scenarios), "minutes")
    population = fill(pop_rows, population_csv, ("a", "g"), (ages, genders), "count")
    burden = fill(burden_rows, burden_csv, ("a", "d", "g"), (ages, DISEASES, genders), "deaths")
    return ConstantTables(ages, genders, scenarios, baseline, travel, population, burden)


def load_curves(path) -> dict:
    """Dose-response curves from ``curves.csv`` (d,exposure,rr) or a JSON IER file."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            spec = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(path, exc.lineno, exc.msg) from None
        blocks = spec.get("ier", spec) if isinstance(spec, dict) else None
        if not isinstance(blocks, dict):
            raise SchemaError(path, None, "expected an object of per-disease IER blocks")
        curves = {}
        for d, block in blocks.items():
            if d not in DISEASES:
                raise SchemaError(path, None, f"unknown disease {d!r}")
            try:
                curves[d] = IerCurve(float(block["alpha"]), float(block["gamma"]),
                                     float(block["delta"]), float(block.get("cf", 0.0)))
            except (KeyError, TypeError) as exc:
                raise SchemaError(path, None, f"bad IER block for {d!r}: {exc}") from None
            except ParameterDomainError as exc:
                raise SchemaError(path, None, f"{d}: {exc}") from None
    else:
        rows = read_table(path, ("d", "exposure", "rr"), numeric=("exposure", "rr"))
        points = {}
        for lineno, row in rows:
            if row["d"] not in DISEASES:
                raise SchemaError(path, lineno, f"unknown disease {row['d']!r}")
            pts = points.setdefault(row["d"], [])
            if pts and row["exposure"] <= pts[-1][1]:
                raise SchemaError(path, lineno, "exposures must be strictly increasing within a disease")
            if pts and row["rr"] < pts[-1][2]:
                raise SchemaError(path, lineno, "RR must be non-decreasing within a disease")
            pts.append((lineno, row["exposure"], row["rr"]))
        curves = {}
        for d, pts in points.items():
            try:
                curves[d] = TabulatedCurve([p[1] for p in pts], [p[2] for p in pts])
            except ParameterDomainError as exc:
                raise SchemaError(path, pts[0][0], f"{d}: {exc}") from None
    missing = [d for d in DISEASES if d not in curves]
    if missing:
        raise SchemaError(path, None, f"no curve for diseases {missing}")
    return curves
