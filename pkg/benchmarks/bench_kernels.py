#!/usr/bin/env python3
"""Compare the compiled and pure-Python hierarchical sampler kernels.

Runs one chain of the three-level model on the bundled city extract and on a
larger synthetic extract (10 regions, ~100 countries, ~3000 cities), checks
that both backends return identical draws and reports wall time.

    python benchmarks/bench_kernels.py [--iterations N] [--repeat K]
"""

import argparse
import math
import time
from importlib import resources

import numpy as np

from voi import bayes, kernels
from voi._hier_kernel_py import N_MOVES
from voi.mcmc import ADAPT_BATCH, TARGET_ACCEPT


def synthetic_extract(seed=0, n_regions=10, n_countries=104, n_cities=2972):
    rng = np.random.default_rng(seed)
    theta_r = rng.normal(3.0, 0.5, n_regions)
    region_of = rng.integers(0, n_regions, n_countries)
    theta_c = rng.normal(theta_r[region_of], 0.4)
    country = np.sort(np.r_[np.arange(n_countries), rng.integers(0, n_countries, n_cities - n_countries)])
    pm = np.exp(rng.normal(theta_c[country], 0.35))
    return bayes.CityPollutionData(
        tuple(f"city_{i}" for i in range(n_cities)),
        tuple(f"country_{c}" for c in country),
        tuple(f"region_{region_of[c]}" for c in country),
        pm,
    )


def time_backend(fn, layout, iterations, repeat):
    P = layout.size
    gen = np.random.default_rng(1)
    u0 = bayes._initial_state(layout, gen, None)
    normals = gen.standard_normal((iterations, P + N_MOVES))
    log_unif = np.log(gen.random((iterations, P + N_MOVES)))
    args = (u0, np.full(P + N_MOVES, math.log(0.3)), np.ones(P, dtype=np.uint8), layout.country_region, layout.reg_ptr,
            layout.reg_countries, layout.n_c, layout.ybar, layout.w_c, bayes.THETA_GLOBAL_PRIOR_SD,
            np.ones(3), normals, log_unif, iterations // 2, ADAPT_BATCH, TARGET_ACCEPT)
    best, out = math.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=5000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the Python fallback is available")
    bundled = resources.files("voi").joinpath("data/synthetic/cities.csv")
    datasets = {"bundled": bayes.read_cities(bundled), "large": synthetic_extract()}
    print(f"{'dataset':<8} {'params':>6} {'backend':<7} {'seconds':>9} {'speedup':>8}")
    for label, data in datasets.items():
        layout = bayes.HierarchicalLayout.from_data(data)
        results = {name: time_backend(fn, layout, args.iterations, args.repeat) for name, fn in backends.items()}
        base = results["python"][0]
        for name, (secs, _) in results.items():
            print(f"{label:<8} {layout.size:>6} {name:<7} {secs:>9.3f} {base / secs:>7.1f}x")
        if "cython" in results:
            same = all(np.array_equal(a, b) for a, b in zip(results["python"][1], results["cython"][1]))
            print(f"{label:<8} draws identical across backends: {same}")


if __name__ == "__main__":
    main()
