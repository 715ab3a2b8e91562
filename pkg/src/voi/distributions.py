"""Probability distributions for parameter uncertainty.

Every distribution is an immutable dataclass that can be sampled with an
:class:`Rng`, evaluated on the log scale (where a density exists) and
round-tripped through a small JSON dialect::

    {"kind": "lognormal", "mu": 3, "sigma": 1}
    {"kind": "dirichlet", "concentration": [32, 4, 4, 60],
     "labels": ["car", "bus", "motorbike", "goods"]}
    {"kind": "empirical", "path": "posterior_zeta.csv"}

Log-normal parameters are the mean and standard deviation on the log scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import integrate, special

from .csvio import atomic_write_text
from .errors import ParameterDomainError, SchemaError, UnsupportedOperationError

__all__ = [
    "Rng",
    "Distribution",
    "Normal",
    "LogNormal",
    "Beta",
    "Dirichlet",
    "HalfNormal",
    "Constant",
    "Empirical",
    "BiasAdjusted",
    "sample",
    "density",
    "quantile",
    "bias_adjust",
    "from_dict",
    "to_dict",
    "read_pool_csv",
    "write_pool_csv",
    "MIN_EMPIRICAL_POOL",
]

MIN_EMPIRICAL_POOL = 100
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Rng:
    """Seed plus substream key.

    The same ``(seed, stream)`` pair always yields the same PCG64 bit
    stream; substreams derived with :meth:`substream` are statistically
    independent of each other and of the parent.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterDomainError("seed", self.seed, "must fit in 64 unsigned bits")

    def substream(self, *key: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, Rng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected Rng or numpy Generator, got {type(rng).__name__}")


def _positive(name, value):
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ParameterDomainError(name, value, "must be finite and > 0")
    return value


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ParameterDomainError(name, value, "must be finite")
    return value


class Distribution:
    """Common interface. Subclasses are frozen dataclasses."""

    kind: str = ""
    #: number of coordinates in one draw (1 for univariate kinds)
    dim: int = 1

    def draw(self, gen: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, x):
        raise UnsupportedOperationError(f"{self.kind} distributions have no density")

    def cdf(self, x):
        raise UnsupportedOperationError(f"{self.kind} distributions have no closed-form cdf")

    def expectation(self):
        raise NotImplementedError

    def variance(self):
        raise NotImplementedError

    def in_support(self, x) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(Distribution):
    mean: float
    sd: float
    kind = "normal"

    def __post_init__(self):
        object.__setattr__(self, "mean", _finite("mean", self.mean))
        object.__setattr__(self, "sd", _positive("sd", self.sd))

    def draw(self, gen, n):
        return gen.normal(self.mean, self.sd, n)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mean) / self.sd)

    def expectation(self):
        return self.mean

    def variance(self):
        return self.sd**2

    def in_support(self, x):
        return np.isfinite(x)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class LogNormal(Distribution):
    """Log-normal with ``mu`` and ``sigma`` on the log scale."""

    mu: float
    sigma: float
    kind = "lognormal"

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "sigma", _positive("sigma", self.sigma))

    def draw(self, gen, n):
        return gen.lognormal(self.mu, self.sigma, n)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            z = (lx - self.mu) / self.sigma
            out = -0.5 * z * z - lx - math.log(self.sigma) - _LOG_SQRT_2PI
        return np.where(x > 0, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, special.ndtr((np.log(np.maximum(x, 1e-300)) - self.mu) / self.sigma), 0.0)

    def expectation(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def variance(self):
        s2 = self.sigma**2
        return math.expm1(s2) * math.exp(2 * self.mu + s2)

    def in_support(self, x):
        return np.asarray(x) > 0

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Beta(Distribution):
    a: float
    b: float
    kind = "beta"

    def __post_init__(self):
        object.__setattr__(self, "a", _positive("a", self.a))
        object.__setattr__(self, "b", _positive("b", self.b))

    def draw(self, gen, n):
        return gen.beta(self.a, self.b, n)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < 1)
        xc = np.where(inside, x, 0.5)
        out = (
            (self.a - 1) * np.log(xc)
            + (self.b - 1) * np.log1p(-xc)
            - special.betaln(self.a, self.b)
        )
        return np.where(inside, out, -np.inf)

    def cdf(self, x):
        return special.betainc(self.a, self.b, np.clip(np.asarray(x, dtype=float), 0.0, 1.0))

    def expectation(self):
        return self.a / (self.a + self.b)

    def variance(self):
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1))

    def in_support(self, x):
        x = np.asarray(x)
        return (x > 0) & (x < 1)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Dirichlet(Distribution):
    concentration: tuple[float, ...]
    labels: tuple[str, ...] | None = None
    kind = "dirichlet"

    def __post_init__(self):
        conc = tuple(float(c) for c in self.concentration)
        if len(conc) < 2:
            raise ParameterDomainError("concentration", conc, "needs at least 2 entries")
        for i, c in enumerate(conc):
            _positive(f"concentration[{i}]", c)
        object.__setattr__(self, "concentration", conc)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != len(conc) or len(set(labels)) != len(labels):
                raise ParameterDomainError("labels", labels, "must be unique, one per concentration entry")
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return len(self.concentration)

    def draw(self, gen, n):
        conc = np.asarray(self.concentration)
        g = gen.standard_gamma(conc, size=(n, conc.size))
        total = g.sum(axis=1)
        bad = total == 0
        while bad.any():
            g[bad] = gen.standard_gamma(conc, size=(int(bad.sum()), conc.size))
            total = g.sum(axis=1)
            bad = total == 0
        return g / total[:, None]

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        conc = np.asarray(self.concentration)
        if x.shape[-1] != conc.size:
            raise ParameterDomainError("x", x.shape, f"expected {conc.size} coordinates")
        inside = np.all(x > 0, axis=-1) & (np.abs(x.sum(axis=-1) - 1.0) < 1e-9)
        xc = np.where(x > 0, x, 1.0)
        norm = special.gammaln(conc.sum()) - special.gammaln(conc).sum()
        out = norm + ((conc - 1) * np.log(xc)).sum(axis=-1)
        return np.where(inside, out, -np.inf)

    def expectation(self):
        conc = np.asarray(self.concentration)
        return conc / conc.sum()

    def variance(self):
        conc = np.asarray(self.concentration)
        a0 = conc.sum()
        m = conc / a0
        return m * (1 - m) / (a0 + 1)

    def in_support(self, x):
        x = np.asarray(x)
        return np.all((x > 0) & (x < 1), axis=-1) & (np.abs(x.sum(axis=-1) - 1.0) <= 1e-12)

    def to_dict(self):
        out = {"kind": self.kind, "concentration": list(self.concentration)}
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out


@dataclass(frozen=True)
class HalfNormal(Distribution):
    """``|Z|`` with ``Z ~ Normal(0, sd)``."""

    sd: float
    kind = "halfnormal"

    def __post_init__(self):
        object.__setattr__(self, "sd", _positive("sd", self.sd))

    def draw(self, gen, n):
        return np.abs(gen.normal(0.0, self.sd, n))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = x / self.sd
        out = math.log(2.0) - 0.5 * z * z - math.log(self.sd) - _LOG_SQRT_2PI
        return np.where(x >= 0, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.erf(x / (self.sd * math.sqrt(2.0))), 0.0)

    def expectation(self):
        return self.sd * math.sqrt(2.0 / math.pi)

    def variance(self):
        return self.sd**2 * (1.0 - 2.0 / math.pi)

    def in_support(self, x):
        return np.asarray(x) >= 0

    def to_dict(self):
        return {"kind": self.kind, "sd": self.sd}


@dataclass(frozen=True)
class Constant(Distribution):
    value: float
    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "value", _finite("value", self.value))

    def draw(self, gen, n):
        return np.full(n, self.value)

    def expectation(self):
        return self.value

    def variance(self):
        return 0.0

    def in_support(self, x):
        return np.asarray(x) == self.value

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class Empirical(Distribution):
    """Uniform resampling, with replacement, from a fixed pool of draws."""

    pool: np.ndarray
    source: str | None = None
    kind = "empirical"

    def __post_init__(self):
        pool = np.array(self.pool, dtype=float).ravel()
        if pool.size < MIN_EMPIRICAL_POOL:
            raise ParameterDomainError("pool", pool.size, f"needs at least {MIN_EMPIRICAL_POOL} draws")
        if not np.all(np.isfinite(pool)):
            raise ParameterDomainError("pool", "non-finite", "draws must be finite")
        pool.setflags(write=False)
        object.__setattr__(self, "pool", pool)

    def draw(self, gen, n):
        return self.pool[gen.integers(0, self.pool.size, n)]

    def expectation(self):
        return float(self.pool.mean())

    def variance(self):
        # population variance of the pool: the exact variance of one resampled draw
        return float(self.pool.var())

    def in_support(self, x):
        return np.isin(x, self.pool)

    def to_dict(self):
        if self.source is None:
            raise UnsupportedOperationError("empirical distribution has no backing CSV; write it with write_pool_csv first")
        return {"kind": self.kind, "path": self.source}


@dataclass(frozen=True)
class BiasAdjusted(Distribution):
    """``base + d`` with independent bias ``d ~ Normal(bias_mean, bias_sd)``."""

    base: Distribution
    bias_mean: float = 0.0
    bias_sd: float = 0.0
    kind = "bias_adjusted"

    def __post_init__(self):
        if isinstance(self.base, Dirichlet):
            raise UnsupportedOperationError("cannot bias-adjust a Dirichlet: the simplex is not closed under addition")
        object.__setattr__(self, "bias_mean", _finite("bias_mean", self.bias_mean))
        sd = float(self.bias_sd)
        if not (sd >= 0 and math.isfinite(sd)):
            raise ParameterDomainError("bias_sd", sd, "must be finite and >= 0")
        object.__setattr__(self, "bias_sd", sd)

    def draw(self, gen, n):
        x = self.base.draw(gen, n)
        # bias drawn after the base block so the base draws match an unadjusted run
        return x + gen.normal(self.bias_mean, self.bias_sd, n) if self.bias_sd > 0 else x + self.bias_mean

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.bias_sd == 0:
            return self.base.logpdf(x - self.bias_mean)
        if isinstance(self.base, Normal):
            return Normal(self.base.mean + self.bias_mean, math.hypot(self.base.sd, self.bias_sd)).logpdf(x)
        if isinstance(self.base, (Constant, Empirical)):
            raise UnsupportedOperationError(f"no density for a bias-adjusted {self.base.kind}")
        bias = Normal(self.bias_mean, self.bias_sd)

        def one(xv):
            f = lambda b: math.exp(float(self.base.logpdf(xv - b)) + float(bias.logpdf(b)))
            lo, hi = self.bias_mean - 10 * self.bias_sd, self.bias_mean + 10 * self.bias_sd
            val, _ = integrate.quad(f, lo, hi, limit=200)
            return math.log(val) if val > 0 else -math.inf

        return np.vectorize(one, otypes=[float])(x)

    def expectation(self):
        return self.base.expectation() + self.bias_mean

    def variance(self):
        return self.base.variance() + self.bias_sd**2

    def in_support(self, x):
        if self.bias_sd > 0:
            return np.isfinite(x)
        return self.base.in_support(np.asarray(x) - self.bias_mean)

    def to_dict(self):
        return {
            "kind": self.kind,
            "base": self.base.to_dict(),
            "bias_mean": self.bias_mean,
            "bias_sd": self.bias_sd,
        }


def sample(dist: Distribution, rng, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. values. Dirichlet returns an ``(n, k)`` matrix."""
    n = int(n)
    if n < 1:
        raise ParameterDomainError("n", n, "must be >= 1")
    return dist.draw(_as_generator(rng), n)


def density(dist: Distribution, x):
    """Log-density at ``x``; ``-inf`` outside the support."""
    if isinstance(dist, (Empirical, Constant)):
        raise UnsupportedOperationError(f"{dist.kind} distributions have no density")
    out = dist.logpdf(x)
    return float(out) if np.ndim(out) == 0 else out


def quantile(dist: Distribution, q: float) -> float:
    """Inverse cdf of a univariate parametric distribution."""
    if not 0 < q < 1:
        raise ParameterDomainError("q", q, "must lie in (0, 1)")
    if isinstance(dist, Beta):
        return float(special.betaincinv(dist.a, dist.b, q))
    if isinstance(dist, LogNormal):
        return float(math.exp(dist.mu + dist.sigma * special.ndtri(q)))
    if isinstance(dist, HalfNormal):
        return float(dist.sd * special.ndtri(0.5 + 0.5 * q))
    if isinstance(dist, Normal):
        return float(dist.mean + dist.sd * special.ndtri(q))
    raise UnsupportedOperationError(f"quantile not available for {dist.kind}")


def bias_adjust(base: Distribution, bias_mean: float, bias_sd: float) -> BiasAdjusted:
    """Inflate ``base`` with an additive Normal bias term."""
    return BiasAdjusted(base, bias_mean, bias_sd)


def read_pool_csv(path) -> np.ndarray:
    """Read a one-column CSV of draws with header ``value``."""
    path = Path(path)
    values = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["value"]:
            raise SchemaError(path, 1, f"expected header 'value', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1:
                raise SchemaError(path, lineno, f"expected 1 column, got {len(row)}")
            try:
                v = float(row[0])
            except ValueError:
                raise SchemaError(path, lineno, f"not a number: {row[0]!r}") from None
            if not math.isfinite(v):
                raise SchemaError(path, lineno, f"non-finite value {row[0]!r}")
            values.append(v)
    return np.asarray(values)


def write_pool_csv(path, values: Sequence[float]) -> None:
    lines = ["value"] + [repr(v) for v in np.asarray(values, dtype=float).ravel().tolist()]
    atomic_write_text(path, "\n".join(lines) + "\n")


_REQUIRED = {
    "normal": ("mean", "sd"),
    "lognormal": ("mu", "sigma"),
    "beta": ("a", "b"),
    "dirichlet": ("concentration",),
    "halfnormal": ("sd",),
    "constant": ("value",),
    "empirical": ("path",),
    "bias_adjusted": ("base", "bias_mean", "bias_sd"),
}


def from_dict(spec: dict, base_dir=None) -> Distribution:
    """Build a distribution from its JSON object form.

    Relative empirical paths are resolved against ``base_dir``.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ParameterDomainError("kind", spec, "distribution object needs a 'kind'")
    kind = str(spec["kind"]).lower()
    if kind not in _REQUIRED:
        raise ParameterDomainError("kind", kind, f"unknown; expected one of {sorted(_REQUIRED)}")
    missing = [k for k in _REQUIRED[kind] if k not in spec]
    if missing:
        raise ParameterDomainError(missing[0], None, f"required for {kind}")
    if kind == "normal":
        return Normal(spec["mean"], spec["sd"])
    if kind == "lognormal":
        return LogNormal(spec["mu"], spec["sigma"])
    if kind == "beta":
        return Beta(spec["a"], spec["b"])
    if kind == "dirichlet":
        labels = spec.get("labels")
        return Dirichlet(tuple(spec["concentration"]), tuple(labels) if labels else None)
    if kind == "halfnormal":
        return HalfNormal(spec["sd"])
    if kind == "constant":
        return Constant(spec["value"])
    if kind == "empirical":
        path = Path(spec["path"])
        full = path if path.is_absolute() or base_dir is None else Path(base_dir) / path
        return Empirical(read_pool_csv(full), source=str(spec["path"]))
    return BiasAdjusted(from_dict(spec["base"], base_dir), spec["bias_mean"], spec["bias_sd"])


def to_dict(dist: Distribution) -> dict[str, Any]:
    return dist.to_dict()
