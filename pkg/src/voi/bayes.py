"""Bayesian updates of individual model parameters.

Two analyses are provided:

* a random-effects meta-analysis of study proportions for the fraction of
  pollution attributable to transport, ``logit(y_i) ~ N(logit(zeta), tau^2)``;
* a three-level (region, country, city) log-normal model for background PM2.5
  concentrations, giving a predictive distribution for one target country.

Both return :class:`~voi.mcmc.PosteriorSamples`; :func:`to_distribution`
turns a converged posterior into an :class:`~voi.distributions.Empirical`
distribution that re-enters the Monte Carlo loop.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from ._hier_kernel_py import N_MOVES
from .csvio import atomic_write_text, read_table
from .distributions import Beta, Distribution, Empirical, HalfNormal, Rng, write_pool_csv
from .errors import ConvergenceError, ParameterDomainError, SchemaError, UnresolvableTargetError
from .mcmc import (ADAPT_BATCH, TARGET_ACCEPT, McmcConfig, PosteriorSamples, effective_sample_size,
                   mcmc, split_rhat)

THETA_GLOBAL_PRIOR_SD = 5.0
# substream key for posterior-predictive draws, clear of the per-chain keys
_PREDICTIVE_STREAM = 1 << 20


# -- meta-analysis --------------------------------------------------------------


@dataclass(frozen=True)
class MetaAnalysisData:
    """Observed proportions, one per study, each strictly inside (0, 1)."""

    y: np.ndarray
    study_ids: tuple = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        bad = ~((y > 0) & (y < 1))
        if np.any(bad):
            raise ParameterDomainError("proportion", float(y[bad][0]), "must lie strictly in (0, 1)")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def logit(self) -> np.ndarray:
        return np.log(self.y) - np.log1p(-self.y)


def read_studies(path) -> MetaAnalysisData:
    rows = read_table(path, ("study_id", "proportion"), numeric=("proportion",))
    if not rows:
        raise SchemaError(path, None, "no studies")
    ids, y = [], []
    for line, row in rows:
        if not 0 < row["proportion"] < 1:
            raise SchemaError(path, line, f"proportion {row['proportion']} outside (0, 1)")
        if row["study_id"] in ids:
            raise SchemaError(path, line, f"duplicate study_id {row['study_id']!r}")
        ids.append(row["study_id"])
        y.append(row["proportion"])
    return MetaAnalysisData(np.array(y), tuple(ids))


def meta_log_posterior(zeta, tau, logit_y, prior_zeta: Distribution, prior_tau: Distribution) -> float:
    """Unnormalised log posterior of ``(zeta, tau)`` on the natural scale."""
    if not (0.0 < zeta < 1.0 and tau > 0.0):
        return -math.inf
    mu = math.log(zeta) - math.log1p(-zeta)
    ll = 0.0
    for v in logit_y:
        z = (v - mu) / tau
        ll -= 0.5 * z * z
    ll -= len(logit_y) * math.log(tau)
    return ll + float(prior_zeta.logpdf(zeta)) + float(prior_tau.logpdf(tau))


def meta_analysis_zeta(data, prior_zeta: Distribution = Beta(2.0, 3.0),
                       prior_tau: Distribution = HalfNormal(1.0),
                       config: McmcConfig = McmcConfig()) -> PosteriorSamples:
    """Posterior of the pooled proportion ``zeta`` and between-study sd ``tau``.

    ``data`` may be a :class:`MetaAnalysisData` or a sequence of proportions;
    an empty sequence samples the prior.
    """
    if not isinstance(data, MetaAnalysisData):
        data = MetaAnalysisData(np.asarray(data, dtype=float))
    logit_y = [float(v) for v in data.logit]

    def log_post(x):
        return meta_log_posterior(x[0], x[1], logit_y, prior_zeta, prior_tau)

    def init(gen):
        # overdispersed start: independent prior draws, kept off the boundaries
        z = float(np.clip(prior_zeta.draw(gen, 1)[0], 0.02, 0.98))
        t = float(np.clip(prior_tau.draw(gen, 1)[0], 1e-3, None))
        return np.array([z, t])

    return mcmc(log_post, ("zeta", "tau"), ("unit", "positive"), config, init=init)


# -- hierarchical model ---------------------------------------------------------


@dataclass(frozen=True)
class CityPollutionData:
    city: tuple
    country: tuple
    region: tuple
    pm25: np.ndarray

    def __post_init__(self):
        pm = np.array(self.pm25, dtype=float).ravel()
        n = pm.size
        if not (len(self.city) == len(self.country) == len(self.region) == n):
            raise ParameterDomainError("records", n, "city, country, region and pm25 must align")
        if n == 0:
            raise ParameterDomainError("records", 0, "no cities")
        if not np.all(pm > 0) or not np.all(np.isfinite(pm)):
            raise ParameterDomainError("pm25", float(pm[~(pm > 0)][0]) if np.any(~(pm > 0)) else "non-finite",
                                       "concentrations must be positive and finite")
        owner = {}
        for k, r in zip(self.country, self.region):
            if owner.setdefault(k, r) != r:
                raise ParameterDomainError("country", k, f"assigned to regions {owner[k]!r} and {r!r}")
        pm.setflags(write=False)
        object.__setattr__(self, "pm25", pm)

    @property
    def regions(self) -> tuple:
        return tuple(dict.fromkeys(self.region))

    @property
    def countries(self) -> tuple:
        return tuple(dict.fromkeys(self.country))

    def region_of(self, country) -> str:
        return self.region[self.country.index(country)]


def read_cities(path) -> CityPollutionData:
    rows = read_table(path, ("city", "country", "region", "pm25"), numeric=("pm25",))
    if not rows:
        raise SchemaError(path, None, "no cities")
    seen, owner = {}, {}
    for line, row in rows:
        if not row["pm25"] > 0:
            raise SchemaError(path, line, f"pm25 must be positive, got {row['pm25']}")
        key = row["city"]
        if key in seen and seen[key] != row["country"]:
            raise SchemaError(path, line, f"city {key!r} listed under two countries")
        seen[key] = row["country"]
        if owner.setdefault(row["country"], row["region"]) != row["region"]:
            raise SchemaError(path, line, f"country {row['country']!r} listed under two regions")
    return CityPollutionData(
        tuple(r["city"] for _, r in rows),
        tuple(r["country"] for _, r in rows),
        tuple(r["region"] for _, r in rows),
        np.array([r["pm25"] for _, r in rows]),
    )


@dataclass(frozen=True)
class HierarchicalLayout:
    """Index bookkeeping and sufficient statistics for the kernel."""

    regions: tuple
    countries: tuple
    country_region: np.ndarray
    reg_ptr: np.ndarray
    reg_countries: np.ndarray
    n_c: np.ndarray
    ybar: np.ndarray
    w_c: np.ndarray

    @classmethod
    def from_data(cls, data: CityPollutionData):
        regions, countries = data.regions, data.countries
        r_index = {r: i for i, r in enumerate(regions)}
        c_index = {c: i for i, c in enumerate(countries)}
        cr = np.array([r_index[data.region_of(c)] for c in countries], dtype=np.int64)
        order = np.argsort(cr, kind="stable")
        ptr = np.zeros(len(regions) + 1, dtype=np.int64)
        np.add.at(ptr, cr + 1, 1)
        ptr = np.cumsum(ptr)
        logy = np.log(data.pm25)
        idx = np.array([c_index[c] for c in data.country])
        n = np.bincount(idx, minlength=len(countries)).astype(float)
        ybar = np.bincount(idx, weights=logy, minlength=len(countries)) / n
        w = np.bincount(idx, weights=(logy - ybar[idx]) ** 2, minlength=len(countries))
        return cls(regions, countries, cr, ptr, order.astype(np.int64), n, ybar, w)

    @property
    def names(self) -> tuple:
        return (("theta_G",) + tuple(f"theta_R[{r}]" for r in self.regions)
                + tuple(f"theta_C[{c}]" for c in self.countries) + ("tau_G", "tau_R", "tau_C"))

    @property
    def size(self) -> int:
        return 1 + len(self.regions) + len(self.countries) + 3


def hier_log_posterior(u, layout: HierarchicalLayout, tau_prior_sd=(1.0, 1.0, 1.0),
                       theta_prior_sd=THETA_GLOBAL_PRIOR_SD) -> float:
    """Full joint log density on the kernel's unconstrained scale (log taus), up to a constant."""
    u = np.asarray(u, dtype=float)
    nR, nC = len(layout.regions), len(layout.countries)
    th_g = u[0]
    th_r = u[1:1 + nR]
    th_c = u[1 + nR:1 + nR + nC]
    v = u[1 + nR + nC:]
    tau = np.exp(v)
    sd = np.asarray(tau_prior_sd, dtype=float)
    lp = -th_g**2 / (2 * theta_prior_sd**2)
    lp += -nR * v[0] - np.sum((th_r - th_g) ** 2) / (2 * tau[0] ** 2)
    lp += -nC * v[1] - np.sum((th_c - th_r[layout.country_region]) ** 2) / (2 * tau[1] ** 2)
    ss = np.sum(layout.w_c + layout.n_c * (layout.ybar - th_c) ** 2)
    lp += -layout.n_c.sum() * v[2] - ss / (2 * tau[2] ** 2)
    lp += np.sum(-tau**2 / (2 * sd**2) + v)
    return float(lp)


def _initial_state(layout: HierarchicalLayout, gen, fixed_tau):
    # overdispersed around crude data summaries; taus drawn from a widened range
    nR = len(layout.regions)
    th_c = layout.ybar + gen.normal(0.0, 0.5, layout.ybar.size)
    th_r = np.array([th_c[layout.country_region == r].mean() for r in range(nR)]) + gen.normal(0.0, 0.5, nR)
    th_g = th_r.mean() + gen.normal(0.0, 0.5)
    if fixed_tau is None:
        v = np.log(gen.uniform(0.1, 1.5, 3))
    else:
        v = np.log(np.asarray(fixed_tau, dtype=float))
    return np.concatenate([[th_g], th_r, th_c, v])


def resolve_target(data: CityPollutionData, target, target_region=None):
    """Return ``(region_index, country_index_or_None)`` for the prediction target."""
    regions, countries = data.regions, data.countries
    if target in countries:
        return regions.index(data.region_of(target)), countries.index(target)
    if target_region is not None and target_region in regions:
        return regions.index(target_region), None
    where = f" or region {target_region!r}" if target_region is not None else ""
    raise UnresolvableTargetError(
        f"target country {target!r}{where} not found in the city data; "
        "declare the region of a country without cities to predict it"
    )


def hierarchical_eta(data: CityPollutionData, target, target_region=None,
                     config: McmcConfig = McmcConfig(), tau_prior_sd=(1.0, 1.0, 1.0),
                     fixed_tau=None, theta_prior_sd=THETA_GLOBAL_PRIOR_SD, backend=None) -> PosteriorSamples:
    """Posterior of the three-level model and predictive draws of ``eta`` for ``target``.

    ``tau_prior_sd`` are the half-normal scales for ``(tau_G, tau_R, tau_C)``.
    With ``fixed_tau`` the three standard deviations are held at the given
    values and only the location parameters are sampled.  ``eta`` is stored as
    a derived quantity: ``log eta ~ N(theta_C[target], tau_C^2)`` for an
    observed country, with ``theta_C`` first drawn from its region for a
    country without cities.
    """
    r_t, c_t = resolve_target(data, target, target_region)
    layout = HierarchicalLayout.from_data(data)
    hier_chain = kernels.hier_chain if backend is None else kernels.available_backends()[backend]
    P = layout.size
    update = np.ones(P, dtype=np.uint8)
    if fixed_tau is not None:
        if len(fixed_tau) != 3 or not all(t > 0 for t in fixed_tau):
            raise ParameterDomainError("fixed_tau", fixed_tau, "need three positive values")
        update[-3:] = 0
    root = Rng(int(config.seed))
    tps = np.asarray(tau_prior_sd, dtype=float)

    def chain(c):
        gen = root.substream(c).generator()
        u0 = _initial_state(layout, gen, fixed_tau)
        normals = gen.standard_normal((config.iterations, P + N_MOVES))
        log_unif = np.log(gen.random((config.iterations, P + N_MOVES)))
        return hier_chain(u0, np.full(P + N_MOVES, math.log(0.3)), update, layout.country_region, layout.reg_ptr,
                          layout.reg_countries, layout.n_c, layout.ybar, layout.w_c,
                          float(theta_prior_sd), tps, normals, log_unif, config.burn_in,
                          ADAPT_BATCH, TARGET_ACCEPT)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=int(config.threads)) as pool:
            results = list(pool.map(chain, range(config.chains)))
    else:
        results = [chain(c) for c in range(config.chains)]
    draws = np.stack([r[0] for r in results])
    draws[:, :, -3:] = np.exp(draws[:, :, -3:])
    post = PosteriorSamples(layout.names, draws, np.stack([r[1][:P] for r in results]),
                            int(config.seed))

    gen = root.substream(_PREDICTIVE_STREAM).generator()
    tau_r, tau_c = draws[:, :, -2], draws[:, :, -1]
    if c_t is None:
        theta = draws[:, :, 1 + r_t] + tau_r * gen.standard_normal(tau_r.shape)
    else:
        theta = draws[:, :, 1 + len(layout.regions) + c_t]
    eta = np.exp(theta + tau_c * gen.standard_normal(tau_c.shape))
    add_derived(post, "eta", eta)
    if config.check:
        sampled = tuple(n for n, u in zip(post.names, update) if u)
        failed = post.failures(sampled + ("eta",))
        if failed:
            detail = ", ".join(f"{k} (R-hat {v['rhat']:.3f}, ESS {v['ess']:.0f})" for k, v in failed.items())
            raise ConvergenceError(f"MCMC did not converge: {detail}; try more iterations", post.diagnostics())
    return post


def add_derived(post: PosteriorSamples, name, chains):
    chains = np.asarray(chains, dtype=float)
    post.derived[name] = chains
    post.rhat[name] = split_rhat(chains)
    post.ess[name] = effective_sample_size(chains)


# -- hand-off ----------------------------------------------------------------------


def to_distribution(post: PosteriorSamples, name) -> Empirical:
    """Empirical distribution over the pooled post-burn-in draws of ``name``."""
    if name not in post:
        raise KeyError(f"{name!r} not in posterior; available: {', '.join(post.names + tuple(post.derived))}")
    failed = post.failures([name])
    if failed:
        d = failed[name]
        raise ConvergenceError(
            f"refusing to use {name!r}: R-hat {d['rhat']:.3f} and ESS {d['ess']:.0f} miss the "
            "convergence thresholds; rerun with more iterations", post.diagnostics())
    return Empirical(post.pooled(name))


def write_posterior(post: PosteriorSamples, name, out_dir, label=None) -> Path:
    """Write pooled draws as ``posterior_<label>.csv`` (single ``value`` column)."""
    path = Path(out_dir) / f"posterior_{label or name}.csv"
    write_pool_csv(path, post.pooled(name))
    return path


def write_diagnostics(post: PosteriorSamples, path, extra=None) -> Path:
    payload = post.diagnostics()
    if extra:
        payload.update(extra)
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return Path(path)
