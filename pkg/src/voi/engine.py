"""Monte Carlo propagation of parameter uncertainty through the model.

Rows are generated in fixed-size blocks.  Block ``b`` draws parameter ``p``
from substream ``(b, crc32(p))`` of the run seed, so the matrix depends only
on the seed and the row count: never on the thread count or on scheduling.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import model
from .csvio import atomic_write_text
from .distributions import Constant, Dirichlet, Distribution, Rng
from .errors import ConfigError, ModelEvaluationError, ParameterDomainError, SchemaError, VoiError

log = logging.getLogger(__name__)

BLOCK_ROWS = 250
DEFAULT_SAMPLES = 5000
XI_PREFIX = "xi_"
ALPHA_PREFIX = "alpha_"
SCALARS = ("eta", "zeta", "lambda_walk", "lambda_cycle")


@dataclass(eq=False)
class SampleMatrix:
    """Aligned joint parameter draws and model outputs, one row per draw."""

    params: dict
    outputs: dict

    def __post_init__(self):
        self.params = {k: np.asarray(self.params[k], dtype=float) for k in sorted(self.params)}
        self.outputs = {k: np.asarray(v, dtype=float) for k, v in self.outputs.items()}
        lengths = {v.shape for v in (*self.params.values(), *self.outputs.values())}
        if len(lengths) > 1:
            raise ValueError(f"columns differ in length: {sorted(lengths)}")
        for name, col in (*self.params.items(), *self.outputs.items()):
            if col.ndim != 1:
                raise ValueError(f"column {name!r} is not one-dimensional")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name!r} has missing or non-finite values")

    @property
    def R(self) -> int:
        for col in (*self.params.values(), *self.outputs.values()):
            return col.shape[0]
        return 0

    @property
    def columns(self) -> list:
        return [*self.params, *self.outputs]

    def column(self, name) -> np.ndarray:
        if name in self.params:
            return self.params[name]
        if name in self.outputs:
            return self.outputs[name]
        raise KeyError(name)

    def parameter_groups(self) -> dict:
        """Group columns into parameters: all ``alpha_*`` columns form ``alpha``."""
        groups = {}
        for name in self.params:
            key = "alpha" if name.startswith(ALPHA_PREFIX) else name
            groups.setdefault(key, []).append(name)
        return groups

    def take(self, rows) -> "SampleMatrix":
        rows = np.asarray(rows)
        return SampleMatrix({k: v[rows] for k, v in self.params.items()},
                            {k: v[rows] for k, v in self.outputs.items()})

    def to_csv(self, path=None) -> str:
        """Serialise with a header row; values use shortest round-trip repr."""
        names = self.columns
        cols = [self.column(n) for n in names]
        buf = io.StringIO()
        buf.write(",".join(names) + "\n")
        for r in range(self.R):
            buf.write(",".join(repr(float(c[r])) for c in cols) + "\n")
        text = buf.getvalue()
        if path is not None:
            atomic_write_text(path, text)
        return text

    @classmethod
    def from_csv(cls, path, outputs=None) -> "SampleMatrix":
        """Read a matrix. Output columns are those containing ``:`` unless
        ``outputs`` names them explicitly."""
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise SchemaError(path, 1, "empty file")
        header = lines[0].split(",")
        if len(set(header)) != len(header):
            raise SchemaError(path, 1, "duplicate column names")
        data = np.empty((len(lines) - 1, len(header)))
        for i, line in enumerate(lines[1:]):
            cells = line.split(",")
            if len(cells) != len(header):
                raise SchemaError(path, i + 2, f"expected {len(header)} fields, got {len(cells)}")
            try:
                data[i] = [float(c) for c in cells]
            except ValueError as exc:
                raise SchemaError(path, i + 2, str(exc)) from None
        out_names = set(outputs) if outputs is not None else {h for h in header if ":" in h}
        params = {h: data[:, j] for j, h in enumerate(header) if h not in out_names}
        outs = {h: data[:, j] for j, h in enumerate(header) if h in out_names}
        return cls(params, outs)


@dataclass(frozen=True)
class OutcomeSummary:
    mean: float
    variance: float
    sd: float
    mcse_mean: float
    mcse_variance: float
    R: int


def summarize_column(y) -> OutcomeSummary:
    y = np.asarray(y, dtype=float)
    R = y.size
    if R < 2:
        raise ValueError("need at least 2 draws to summarise")
    if np.all(y == y[0]):
        # the summed mean can round away from a repeated value
        return OutcomeSummary(float(y[0]), 0.0, 0.0, 0.0, 0.0, R)
    mean = float(y.mean())
    var = float(y.var(ddof=1))
    centred = y - mean
    m4 = float(np.mean(centred**4))
    m2 = float(np.mean(centred**2))
    return OutcomeSummary(
        mean=mean,
        variance=var,
        sd=math.sqrt(var),
        mcse_mean=math.sqrt(var / R),
        mcse_variance=math.sqrt(max(m4 - m2 * m2, 0.0) / R),
        R=R,
    )


def summarize(m: SampleMatrix) -> dict:
    """Per-output mean, unbiased variance, sd and Monte Carlo standard errors."""
    return {name: summarize_column(col) for name, col in m.outputs.items()}


def write_summary(summaries: Mapping[str, OutcomeSummary], path) -> None:
    atomic_write_text(path, json.dumps({k: asdict(v) for k, v in summaries.items()}, indent=2, sort_keys=True) + "\n")


def _check_weights(m: SampleMatrix, weights: Mapping[str, float]) -> dict:
    if not weights:
        raise ConfigError("no outputs given")
    unknown = [k for k in weights if k not in m.outputs]
    if unknown:
        raise ConfigError(f"unknown output(s) {unknown}; available: {list(m.outputs)}")
    w = {k: float(v) for k, v in weights.items()}
    if any(v < 0 or not math.isfinite(v) for v in w.values()):
        raise ConfigError("output weights must be finite and >= 0")
    if not any(v > 0 for v in w.values()):
        raise ConfigError("at least one output weight must be > 0")
    return w


def generalized_variance(m: SampleMatrix, weights: Mapping[str, float]) -> float:
    """Weighted sum of output variances."""
    w = _check_weights(m, weights)
    return float(sum(v * m.outputs[k].var(ddof=1) for k, v in w.items() if v > 0))


# -- propagation --------------------------------------------------------------


def _column_layout(dists: Mapping[str, Distribution], diseases) -> dict:
    """Map each distribution name to the matrix columns it produces."""
    layout = {}
    names = set(dists)
    if "alpha" in names:
        d = dists["alpha"]
        if not isinstance(d, Dirichlet):
            raise ConfigError("parameter 'alpha' must be a Dirichlet; give alpha_<mode> keys for fixed shares")
        labels = d.labels or model.MOTORIZED
        if sorted(labels) != sorted(model.MOTORIZED):
            raise ConfigError(f"alpha labels must be {model.MOTORIZED}, got {labels}")
        layout["alpha"] = [ALPHA_PREFIX + lab for lab in labels]
    else:
        missing = [ALPHA_PREFIX + m for m in model.MOTORIZED if ALPHA_PREFIX + m not in names]
        if missing:
            raise ConfigError(f"no distribution for alpha (missing {missing})")
        for mode in model.MOTORIZED:
            layout[ALPHA_PREFIX + mode] = [ALPHA_PREFIX + mode]
    for name in SCALARS:
        if name not in names:
            raise ConfigError(f"no distribution for parameter {name!r}")
        layout[name] = [name]
    for d in diseases:
        if d == "alri":
            continue
        key = XI_PREFIX + d
        if key not in names:
            raise ConfigError(f"no distribution for parameter {key!r}")
        layout[key] = [key]
    extra = names - set(layout)
    if extra:
        raise ConfigError(f"unknown parameter(s) {sorted(extra)}")
    for name, d in dists.items():
        if isinstance(d, Dirichlet) and name != "alpha":
            raise ConfigError(f"parameter {name!r} is scalar; Dirichlet is only valid for alpha")
    return layout


def _draw_block(dists, layout, rng: Rng, block: int, n: int) -> dict:
    cols = {}
    for name in sorted(dists):
        gen = rng.substream(block, zlib.crc32(name.encode())).generator()
        x = dists[name].draw(gen, n)
        if x.ndim == 2:
            for j, col in enumerate(layout[name]):
                cols[col] = x[:, j]
        else:
            cols[layout[name][0]] = x
    return cols


def _first_bad_row(cols, diseases):
    checks = [
        (cols["eta"] >= 0, "eta must be >= 0"),
        ((cols["zeta"] >= 0) & (cols["zeta"] <= 1), "zeta must lie in [0, 1]"),
        (cols["lambda_walk"] >= 0, "lambda_walk must be >= 0"),
        (cols["lambda_cycle"] >= 0, "lambda_cycle must be >= 0"),
    ]
    alpha = np.stack([cols[ALPHA_PREFIX + m] for m in model.MOTORIZED], axis=-1)
    checks.append(((alpha >= 0).all(axis=1) & (np.abs(alpha.sum(axis=1) - 1) <= 1e-9),
                   "alpha must lie on the simplex"))
    for d in diseases:
        if d != "alri":
            checks.append((cols[XI_PREFIX + d] >= 0, f"xi_{d} must be >= 0"))
    for ok, msg in checks:
        bad = np.flatnonzero(~ok)
        if bad.size:
            return int(bad[0]), msg
    return None


def _evaluate_block(cols, tables, curves, a_hat):
    diseases = tables.diseases
    alpha = np.stack([cols[ALPHA_PREFIX + m] for m in model.MOTORIZED], axis=-1)
    xi = np.stack([np.ones_like(cols["eta"]) if d == "alri" else cols[XI_PREFIX + d] for d in diseases], axis=-1)
    return model.evaluate_arrays(tables, curves, cols["eta"], cols["zeta"], alpha,
                                 cols["lambda_walk"], cols["lambda_cycle"], xi, a_hat=a_hat)


def output_names(tables) -> list:
    names = [f"deaths:{s}" for s in tables.scenarios]
    names += [f"deaths_averted:{s}" for s in tables.scenarios if s != tables.baseline]
    return names


def propagate(dists: Mapping[str, Distribution], tables, curves, R=DEFAULT_SAMPLES,
              rng: Rng | int = 0, threads: int = 1) -> SampleMatrix:
    """Draw ``R`` joint parameter samples and evaluate the model on each row."""
    R = int(R)
    if R < 2:
        raise ParameterDomainError("R", R, "need at least 2 rows")
    if R < 1000:
        log.warning("R=%d is below 1000; EVPPI estimates will be noisy", R)
    if not isinstance(rng, Rng):
        rng = Rng(int(rng))
    layout = _column_layout(dists, tables.diseases)
    a_hat = model.travel_totals(tables)
    starts = list(range(0, R, BLOCK_ROWS))

    def run(b):
        start = starts[b]
        n = min(BLOCK_ROWS, R - start)
        cols = _draw_block(dists, layout, rng, b, n)
        bad = _first_bad_row(cols, tables.diseases)
        if bad is not None:
            i, msg = bad
            raise ModelEvaluationError(start + i, {k: float(v[i]) for k, v in cols.items()}, msg)
        try:
            out = _evaluate_block(cols, tables, curves, a_hat)
            finite = np.isfinite(out.deaths).all(axis=-1)
        except VoiError as exc:
            for i in range(n):
                row = {k: v[i:i + 1] for k, v in cols.items()}
                try:
                    _evaluate_block(row, tables, curves, a_hat)
                except VoiError as row_exc:
                    raise ModelEvaluationError(start + i, {k: float(v[0]) for k, v in row.items()},
                                               row_exc) from row_exc
            raise ModelEvaluationError(start, {k: float(v[0]) for k, v in cols.items()}, exc) from exc
        if not finite.all():
            i = int(np.flatnonzero(~finite)[0])
            raise ModelEvaluationError(start + i, {k: float(v[i]) for k, v in cols.items()},
                                       "non-finite model output")
        return cols, out

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(run, range(len(starts))))
    else:
        results = [run(b) for b in range(len(starts))]

    clamped = sum(len(res[1].warnings) for res in results)
    if clamped:
        log.warning("dose-response curves extrapolated flat in %d block/disease evaluations; "
                    "first: %s", clamped, next(w for res in results for w in res[1].warnings))
    params = {c: np.concatenate([res[0][c] for res in results]) for c in results[0][0]}
    deaths = np.concatenate([res[1].deaths for res in results])
    averted = np.concatenate([res[1].deaths_averted for res in results])
    outputs = {}
    for j, s in enumerate(tables.scenarios):
        outputs[f"deaths:{s}"] = deaths[:, j]
    for j, s in enumerate(tables.scenarios):
        if s != tables.baseline:
            outputs[f"deaths_averted:{s}"] = averted[:, j]
    return SampleMatrix(params, outputs)


def constant_dists(x: model.ParameterVector, diseases=model.DISEASES) -> dict:
    """Degenerate distributions pinning every parameter to ``x``."""
    dists = {name: Constant(getattr(x, name)) for name in SCALARS}
    for mode in model.MOTORIZED:
        dists[ALPHA_PREFIX + mode] = Constant(x.alpha[mode])
    for d in diseases:
        if d != "alri":
            dists[XI_PREFIX + d] = Constant(x.xi.get(d, 1.0))
    return dists
