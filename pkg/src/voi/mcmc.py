"""Component-wise adaptive random-walk Metropolis and convergence diagnostics.

Parameters are sampled on unconstrained scales (log for positive, logit for
unit-interval parameters) with the Jacobian added to the target.  Each
component has its own Gaussian proposal scale; during burn-in the log scale
moves by ``min(0.5, n**-0.5)`` after every batch of iterations, up if the
batch acceptance rate exceeded the target and down otherwise.  At the end of
burn-in each scale is frozen at the average log scale over the second half of
the adaptation batches, so the retained draws come from a fixed Markov kernel.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import Rng
from .errors import ConvergenceError, ParameterDomainError

SUPPORTS = ("real", "positive", "unit")
TARGET_ACCEPT = 0.44
ADAPT_BATCH = 25
RHAT_MAX = 1.05
ESS_MIN = 100


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    iterations: int = 5000
    burn_in_fraction: float = 0.5
    seed: int = 0
    threads: int = 1
    check: bool = True

    def __post_init__(self):
        if self.chains < 2:
            raise ParameterDomainError("chains", self.chains, "need at least 2 chains for R-hat")
        if self.iterations < 2000:
            raise ParameterDomainError("iterations", self.iterations, "need at least 2000 iterations")
        if not 0 < self.burn_in_fraction < 1:
            raise ParameterDomainError("burn_in_fraction", self.burn_in_fraction, "must lie in (0, 1)")

    @property
    def burn_in(self) -> int:
        return int(round(self.iterations * self.burn_in_fraction))


@dataclass
class PosteriorSamples:
    """Post-burn-in draws, ``draws[chain, iteration, parameter]``, on the natural scale."""

    names: tuple
    draws: np.ndarray
    acceptance: np.ndarray
    seed: int
    rhat: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    #: draws derived after sampling (e.g. posterior predictive), same layout as one parameter
    derived: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rhat:
            self.rhat, self.ess = {}, {}
            for j, name in enumerate(self.names):
                self.rhat[name] = split_rhat(self.draws[:, :, j])
                self.ess[name] = effective_sample_size(self.draws[:, :, j])

    def __contains__(self, name):
        return name in self.names or name in self.derived

    def chains(self, name) -> np.ndarray:
        if name in self.derived:
            return self.derived[name]
        return self.draws[:, :, self.names.index(name)]

    def pooled(self, name) -> np.ndarray:
        return self.chains(name).reshape(-1)

    def failures(self, names=None) -> dict:
        """Parameters whose R-hat or ESS misses the convergence thresholds."""
        out = {}
        for name in names if names is not None else self.names:
            r, e = self.rhat[name], self.ess[name]
            if not (r <= RHAT_MAX) or not (e >= ESS_MIN):
                out[name] = {"rhat": r, "ess": e}
        return out

    @property
    def converged(self) -> bool:
        return not self.failures()

    def diagnostics(self) -> dict:
        return {
            "seed": self.seed,
            "chains": int(self.draws.shape[0]),
            "draws_per_chain": int(self.draws.shape[1]),
            "rhat": {k: _json_float(v) for k, v in self.rhat.items()},
            "ess": {k: _json_float(v) for k, v in self.ess.items()},
            "acceptance": {name: [float(a) for a in self.acceptance[:, j]] for j, name in enumerate(self.names)},
        }


def _json_float(v):
    return None if not math.isfinite(v) else float(v)


# -- transforms ---------------------------------------------------------------


def to_unconstrained(x, supports):
    u = np.array(x, dtype=float)
    for j, s in enumerate(supports):
        if s == "positive":
            u[..., j] = np.log(u[..., j])
        elif s == "unit":
            u[..., j] = np.log(u[..., j]) - np.log1p(-u[..., j])
    return u


def to_constrained(u, supports):
    x = np.array(u, dtype=float)
    for j, s in enumerate(supports):
        if s == "positive":
            x[..., j] = np.exp(x[..., j])
        elif s == "unit":
            x[..., j] = 1.0 / (1.0 + np.exp(-x[..., j]))
    return x


def _log_jacobian(u, supports):
    total = 0.0
    for j, s in enumerate(supports):
        if s == "positive":
            total += u[j]
        elif s == "unit":
            # log(sigmoid(u) * (1 - sigmoid(u))), computed stably
            total += -abs(u[j]) - 2.0 * math.log1p(math.exp(-abs(u[j])))
    return total


# -- sampler ------------------------------------------------------------------


def adapt_step(n_batches: int) -> float:
    return min(0.5, 1.0 / math.sqrt(n_batches))


def _run_chain(log_target, u0, gen, config: McmcConfig):
    P = u0.size
    iters, burn = config.iterations, config.burn_in
    normals = gen.standard_normal((iters, P))
    log_unif = np.log(gen.random((iters, P)))
    u = u0.copy()
    lp = log_target(u)
    if not math.isfinite(lp):
        raise ParameterDomainError("init", u0.tolist(), "log posterior is not finite at the initial point")
    log_scale = np.zeros(P)
    batch_acc = np.zeros(P)
    kept_acc = np.zeros(P)
    n_batches = 0
    n_total = burn // ADAPT_BATCH
    late_sum = np.zeros(P)
    out = np.empty((iters - burn, P))
    for it in range(iters):
        for j in range(P):
            old = u[j]
            u[j] = old + math.exp(log_scale[j]) * normals[it, j]
            lp_new = log_target(u)
            if log_unif[it, j] < lp_new - lp:
                lp = lp_new
                if it < burn:
                    batch_acc[j] += 1
                else:
                    kept_acc[j] += 1
            else:
                u[j] = old
        if it < burn and (it + 1) % ADAPT_BATCH == 0:
            n_batches += 1
            step = adapt_step(n_batches)
            log_scale += np.where(batch_acc / ADAPT_BATCH > TARGET_ACCEPT, step, -step)
            batch_acc[:] = 0
            if 2 * n_batches > n_total:
                late_sum += log_scale
            if n_batches == n_total:
                log_scale = late_sum / (n_total - n_total // 2)
        if it >= burn:
            out[it - burn] = u
    return out, kept_acc / (iters - burn)


def mcmc(log_posterior: Callable[[np.ndarray], float], names: Sequence[str], supports: Sequence[str],
         config: McmcConfig = McmcConfig(), init=None) -> PosteriorSamples:
    """Sample from ``log_posterior`` (a function of the natural-scale vector).

    ``init`` is an ``(chains, dim)`` array of natural-scale starting points or
    a callable ``init(generator) -> vector``; by default chains start from
    standard normal draws on the unconstrained scale.
    """
    names = tuple(names)
    supports = tuple(supports)
    if len(names) != len(supports):
        raise ParameterDomainError("supports", supports, "one support per parameter")
    for s in supports:
        if s not in SUPPORTS:
            raise ParameterDomainError("supports", s, f"expected one of {SUPPORTS}")
    root = Rng(int(config.seed))

    def log_target(u):
        lp = float(log_posterior(to_constrained(u, supports)))
        return lp + _log_jacobian(u, supports) if math.isfinite(lp) else -math.inf

    def chain(c):
        gen = root.substream(c).generator()
        if init is None:
            u0 = gen.standard_normal(len(names))
        elif callable(init):
            u0 = to_unconstrained(np.asarray(init(gen), dtype=float), supports)
        else:
            u0 = to_unconstrained(np.asarray(init, dtype=float)[c], supports)
        return _run_chain(log_target, u0, gen, config)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=int(config.threads)) as pool:
            results = list(pool.map(chain, range(config.chains)))
    else:
        results = [chain(c) for c in range(config.chains)]
    draws = to_constrained(np.stack([r[0] for r in results]), supports)
    post = PosteriorSamples(names, draws, np.stack([r[1] for r in results]), int(config.seed))
    if config.check:
        check_convergence(post)
    return post


def check_convergence(post: PosteriorSamples, names=None):
    failed = post.failures(names)
    if failed:
        detail = ", ".join(f"{k} (R-hat {v['rhat']:.3f}, ESS {v['ess']:.0f})" for k, v in failed.items())
        raise ConvergenceError(
            f"MCMC did not converge: {detail}; try more iterations", post.diagnostics()
        )


# -- diagnostics ----------------------------------------------------------------


def _split(chains):
    chains = np.asarray(chains, dtype=float)
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def split_rhat(chains) -> float:
    """Potential scale reduction over half-chains."""
    s = _split(chains)
    if np.all(s == s.flat[0]):
        return 1.0
    n = s.shape[1]
    W = s.var(axis=1, ddof=1).mean()
    B_over_n = s.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B_over_n == 0 else math.inf
    var_plus = (n - 1) / n * W + B_over_n
    return float(math.sqrt(var_plus / W))


def _autocov(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(chains) -> float:
    """Multi-chain ESS on half-chains with Geyer's initial monotone sequence."""
    s = _split(chains)
    m, n = s.shape
    if n < 4 or np.all(s == s.flat[0]):
        return float(m * n)
    acov = np.array([_autocov(c) for c in s])
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return float(m * n)
    var_plus = W * (n - 1) / n + s.mean(axis=1).var(ddof=1) if m > 1 else W
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative pair and made monotone
    total = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n))
    return float(m * n / tau)
