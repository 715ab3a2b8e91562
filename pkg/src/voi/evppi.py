"""Expected value of partial perfect information from Monte Carlo output.

Estimation form: regress the output on the target parameter(s) with a
penalised spline; the mean squared residual estimates the expected
conditional variance left after learning the target, so

    EVPPI = var(Y) - mean(residual ** 2).

Decision form: regress each decision's loss on the target and compare the
expected loss of the best decision now with the expected loss of the best
decision once the target is known.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import smoothing
from .csvio import atomic_write_text
from .distributions import Rng
from .engine import SampleMatrix, _check_weights
from .errors import ParameterDomainError, SchemaError

log = logging.getLogger(__name__)

#: display order of parameter groups in reports
TABLE_ORDER = ("eta", "zeta", "alpha", "lambda_walk", "lambda_cycle",
               "xi_stroke", "xi_ihd", "xi_lc", "xi_copd")
DEFAULT_BOOTSTRAP = 200
UPPER_BOUND_NOTE = ("EVPPI is the variance reduction from perfect information; "
                    "real research yields less, so read it as an upper bound.")


@dataclass
class EvppiEstimate:
    target: str
    columns: tuple
    evppi_abs: float
    evppi_raw: float
    var_y: float
    units: str = "variance"
    bootstrap_se: float | None = None
    edf: float | None = None
    gcv: float | None = None
    residual_variance: float | None = None
    lam: float | None = None
    flags: list = field(default_factory=list)

    @property
    def pct_explained(self) -> float:
        return 100.0 * self.evppi_abs / self.var_y if self.var_y > 0 else 0.0

    @property
    def sd_reduction(self) -> float:
        if self.units != "variance":
            return math.nan
        return math.sqrt(self.var_y) - math.sqrt(max(self.var_y - self.evppi_abs, 0.0))


@dataclass
class DecisionProblem:
    """Loss for each decision (columns) on each joint draw (rows)."""

    losses: np.ndarray
    decisions: tuple = ()

    def __post_init__(self):
        L = np.asarray(self.losses, dtype=float)
        if L.ndim != 2 or L.shape[1] < 2:
            raise ParameterDomainError("losses", L.shape, "need an (R, D) matrix with D >= 2 decisions")
        if not np.all(np.isfinite(L)):
            raise ParameterDomainError("losses", "non-finite", "losses must be finite")
        self.losses = L
        if not self.decisions:
            self.decisions = tuple(f"d{j + 1}" for j in range(L.shape[1]))
        elif len(self.decisions) != L.shape[1]:
            raise ParameterDomainError("decisions", self.decisions, "one name per loss column")

    @classmethod
    def from_net_benefit(cls, benefit, decisions=()):
        return cls(-np.asarray(benefit, dtype=float), decisions)


def resolve_target(m: SampleMatrix, target) -> tuple[str, list]:
    """Name and regressor columns for a parameter group, a column or a list of columns.

    A simplex group contributes all but its last coordinate, which is
    determined by the others.
    """
    groups = m.parameter_groups()
    if isinstance(target, str):
        if target in groups:
            cols = groups[target]
            if target == "alpha" and len(cols) > 1:
                cols = cols[:-1]
            return target, list(cols)
        if target in m.params:
            return target, [target]
        raise KeyError(f"unknown parameter {target!r}; available: {sorted(groups)}")
    cols = list(target)
    for c in cols:
        if c not in m.params:
            raise KeyError(f"unknown parameter column {c!r}")
    return "+".join(cols), cols


def _regressors(m, cols):
    return np.column_stack([m.params[c] for c in cols])


def _is_constant(x):
    return bool(np.all(x.max(axis=0) == x.min(axis=0)))


def _boot_rng(rng, *labels):
    return rng.substream(*(zlib.crc32(str(s).encode()) for s in labels)).generator()


def _bootstrap_variance_form(fit, x, y, n_boot, gen):
    B = fit.basis(x)
    gram = smoothing.WeightedGram(B)
    R = y.size
    draws = np.empty(n_boot)
    for b in range(n_boot):
        w = np.bincount(gen.integers(0, R, R), minlength=R).astype(float)
        coef = smoothing.fit_penalized(B, y, fit.penalty, fit.lam, weights=w, gram=gram)
        resid = y - B @ coef
        mean_w = np.sum(w * y) / R
        var_w = np.sum(w * (y - mean_w) ** 2) / (R - 1)
        draws[b] = var_w - np.sum(w * resid**2) / R
    return float(draws.std(ddof=1))


def _finalise(est: EvppiEstimate) -> EvppiEstimate:
    raw = est.evppi_raw
    upper = est.var_y if est.units == "variance" else math.inf
    est.evppi_abs = float(min(max(raw, 0.0), upper))
    if raw < 0:
        se = est.bootstrap_se
        log.info("EVPPI for %s clamped from %.6g to 0", est.target, raw)
        if se is not None and -raw > 3 * se:
            est.flags.append(f"negative estimate {raw:.4g} exceeds 3 bootstrap SE ({se:.3g})")
    if est.bootstrap_se is not None and est.var_y > 0 and est.units == "variance" \
            and est.bootstrap_se > 0.1 * est.var_y:
        msg = f"Monte Carlo error {est.bootstrap_se:.4g} exceeds 10% of var(Y) for {est.target}"
        est.flags.append(msg)
        log.warning(msg)
    return est


def evppi_estimation(m: SampleMatrix, target, output: str, bootstrap=DEFAULT_BOOTSTRAP,
                     rng: Rng | None = None) -> EvppiEstimate:
    """Variance-reduction EVPPI for one output."""
    name, cols = resolve_target(m, target)
    if output not in m.outputs:
        raise KeyError(f"unknown output {output!r}")
    y = m.outputs[output]
    var_y = 0.0 if np.all(y == y[0]) else float(y.var(ddof=1))
    x = _regressors(m, cols)
    if var_y == 0 or _is_constant(x):
        return EvppiEstimate(name, tuple(cols), 0.0, 0.0, var_y, bootstrap_se=0.0 if bootstrap else None,
                             flags=["constant output" if var_y == 0 else "constant regressor"])
    fit = smoothing.fit_smooth(x, y)
    raw = var_y - fit.residual_variance
    se = None
    if bootstrap:
        rng = rng if rng is not None else Rng(0)
        se = _bootstrap_variance_form(fit, x, y, int(bootstrap), _boot_rng(rng, name, output))
    return _finalise(EvppiEstimate(
        name, tuple(cols), raw, raw, var_y, bootstrap_se=se, edf=fit.edf, gcv=fit.gcv,
        residual_variance=fit.residual_variance, lam=fit.lam,
    ))


def _decision_value(L, fitted):
    return float(L.mean(axis=0).min() - fitted.min(axis=1).mean())


def evppi_decision(problem: DecisionProblem, m: SampleMatrix, target, bootstrap=DEFAULT_BOOTSTRAP,
                   rng: Rng | None = None) -> EvppiEstimate:
    """Expected reduction in loss from learning ``target`` before deciding."""
    name, cols = resolve_target(m, target)
    L = problem.losses
    if L.shape[0] != m.R:
        raise ParameterDomainError("losses", L.shape, f"expected {m.R} rows aligned with the sample matrix")
    x = _regressors(m, cols)
    if _is_constant(x):
        return EvppiEstimate(name, tuple(cols), 0.0, 0.0, math.nan, units="loss",
                             bootstrap_se=0.0 if bootstrap else None, flags=["constant regressor"])
    fits = [smoothing.fit_smooth(x, L[:, d]) for d in range(L.shape[1])]
    fitted = np.column_stack([f.fitted for f in fits])
    raw = _decision_value(L, fitted)
    se = None
    if bootstrap:
        gen = _boot_rng(rng if rng is not None else Rng(0), name, "decision")
        R = m.R
        bases = [f.basis(x) for f in fits]
        grams = [smoothing.WeightedGram(B) for B in bases]
        draws = np.empty(int(bootstrap))
        for b in range(int(bootstrap)):
            w = np.bincount(gen.integers(0, R, R), minlength=R).astype(float)
            g = np.column_stack([
                B @ smoothing.fit_penalized(B, L[:, d], f.penalty, f.lam, weights=w, gram=G)
                for d, (B, G, f) in enumerate(zip(bases, grams, fits))
            ])
            draws[b] = float((w @ L / R).min() - (w @ g.min(axis=1)) / R)
        se = float(draws.std(ddof=1))
    return _finalise(EvppiEstimate(
        name, tuple(cols), raw, raw, math.nan, units="loss", bootstrap_se=se,
        edf=float(np.mean([f.edf for f in fits])), gcv=float(np.mean([f.gcv for f in fits])),
        residual_variance=float(np.mean([f.residual_variance for f in fits])),
    ))


def evppi_all(m: SampleMatrix, outputs: Mapping[str, float] | str, groups: Sequence[str] | None = None,
              bootstrap=DEFAULT_BOOTSTRAP, rng: Rng | None = None, threads: int = 1) -> list:
    """EVPPI for every parameter group, ranked by decreasing value.

    With several outputs the variance is the weighted sum of output
    variances, and each group's EVPPI is the matching weighted sum.
    """
    if isinstance(outputs, str):
        outputs = {outputs: 1.0}
    weights = {k: v for k, v in _check_weights(m, outputs).items() if v > 0}
    groups = list(groups) if groups is not None else list(m.parameter_groups())
    rng = rng if rng is not None else Rng(0)
    jobs = [(g, o) for g in groups for o in weights]

    def run(job):
        return evppi_estimation(m, job[0], job[1], bootstrap=bootstrap, rng=rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = dict(zip(jobs, pool.map(run, jobs)))
    else:
        results = {job: run(job) for job in jobs}

    estimates = []
    for g in groups:
        parts = [(weights[o], results[(g, o)]) for o in weights]
        if len(parts) == 1:
            est = parts[0][1]
        else:
            first = parts[0][1]
            se = [e.bootstrap_se for _, e in parts]
            est = _finalise(EvppiEstimate(
                first.target, first.columns,
                evppi_abs=0.0,
                evppi_raw=sum(w * e.evppi_raw for w, e in parts),
                var_y=sum(w * e.var_y for w, e in parts),
                bootstrap_se=None if None in se else math.sqrt(sum((w * s) ** 2 for (w, _), s in zip(parts, se))),
                flags=[f for _, e in parts for f in e.flags],
            ))
        estimates.append(est)
    estimates.sort(key=lambda e: (-e.evppi_abs, e.target))
    return estimates


def table_order(estimates) -> list:
    """Reorder estimates into the conventional parameter order, unknown names last."""
    rank = {name: i for i, name in enumerate(TABLE_ORDER)}
    return sorted(estimates, key=lambda e: (rank.get(e.target, len(rank)), e.target))


REPORT_COLUMNS = ("parameter", "sd_reduction", "pct_explained", "evppi_abs", "bootstrap_se", "cost_person_days")


def report_csv(estimates, costs: Mapping[str, float] | None = None, path=None) -> str:
    """Table-style CSV, one row per parameter group, in decreasing EVPPI order."""
    costs = costs or {}
    decision = any(e.units == "loss" for e in estimates)
    header = list(REPORT_COLUMNS) + (["evppi_loss"] if decision else [])
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")

    def fmt(v):
        return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

    for e in estimates:
        row = [e.target, fmt(e.sd_reduction), fmt(e.pct_explained if e.units == "variance" else None),
               fmt(e.evppi_abs if e.units == "variance" else None), fmt(e.bootstrap_se),
               fmt(costs.get(e.target))]
        if decision:
            row.append(fmt(e.evppi_abs if e.units == "loss" else None))
        buf.write(",".join(row) + "\n")
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


def read_report_csv(path) -> list:
    """Rows of an EVPPI report as dicts with float values (``None`` for blanks)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:len(REPORT_COLUMNS)]) != list(REPORT_COLUMNS):
            raise SchemaError(path, 1, f"expected header starting {','.join(REPORT_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            out = {}
            for k, v in row.items():
                if k == "parameter":
                    out[k] = v
                    continue
                try:
                    out[k] = float(v) if v not in ("", None) else None
                except ValueError:
                    raise SchemaError(path, lineno, f"column {k!r}: not a number: {v!r}") from None
            rows.append(out)
    return rows
