#!/usr/bin/env python3
"""Evaluate the independent test oracles and store them in tests/data/oracles.json.

Run once after changing an oracle; the test-suite reads the frozen numbers and
one slow test re-evaluates them to catch drift.

    python scripts/freeze_oracles.py
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
from scipy import stats

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402

from voi import model  # noqa: E402

STUDIES = [0.40, 0.30, 0.60]


def model_golden():
    data = ROOT / "src" / "voi" / "data" / "synthetic"
    tables = model.load_tables(data / "travel.csv", data / "population.csv", data / "burden.csv")
    curves = model.load_curves(data / "curves.csv")
    alpha = dict(zip(["car", "bus", "motorbike", "goods"], np.array([32, 4, 4, 60]) / 100))
    x = model.ParameterVector(
        eta=math.exp(3.0),
        zeta=float(stats.beta(2, 3).median()),
        alpha=alpha,
        lambda_walk=math.exp(1.0),
        lambda_cycle=math.exp(2.0),
        xi={d: 1.0 for d in ("copd", "lc", "stroke", "ihd")},
    )
    out = model.evaluate(tables, curves, x)
    return {s: float(v) for s, v in zip(tables.scenarios, out.deaths)}


def main():
    mean, sd = oracles.meta_quadrature(STUDIES)
    mean_fine, sd_fine = oracles.meta_quadrature(STUDIES, n=800)
    mean_ad, sd_ad = oracles.meta_adaptive(STUDIES)
    print(f"meta quadrature 400: {mean:.6f} {sd:.6f}; 800: {mean_fine:.6f} {sd_fine:.6f}; "
          f"adaptive: {mean_ad:.6f} {sd_ad:.6f}")
    doubled = oracles.meta_quadrature(STUDIES * 2)
    prior = oracles.meta_quadrature([])

    literal = oracles.nested_mc_decision(oracles.symmetric_losses, seed=11)
    noisy = oracles.nested_mc_decision(oracles.symmetric_losses, seed=12, noise_sd=1.0)
    print(f"nested MC literal {literal}, noisy {noisy}")

    rng = np.random.default_rng(5)
    base = rng.lognormal(3.0, 1.0, 1_000_000)
    biased = base + rng.normal(0.0, 5.0, base.size)

    payload = {
        "meta_analysis": {
            "data": STUDIES,
            "zeta_mean": mean, "zeta_sd": sd,
            "zeta_mean_adaptive": mean_ad, "zeta_sd_adaptive": sd_ad,
            "doubled_zeta_sd": doubled[1],
            "prior_only_zeta_mean": prior[0],
        },
        "decision_nested_mc": {
            "literal": {"evppi": literal[0], "se": literal[1]},
            "noisy": {"evppi": noisy[0], "se": noisy[1]},
        },
        "bias_adjust_lognormal_variance_gain": float(biased.var(ddof=1) - base.var(ddof=1)),
        "model_prior_medians_deaths": model_golden(),
    }
    oracles.FROZEN.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {oracles.FROZEN}")


if __name__ == "__main__":
    main()
