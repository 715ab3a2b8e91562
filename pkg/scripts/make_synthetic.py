#!/usr/bin/env python3
"""Regenerate the bundled synthetic project under ``src/voi/data/synthetic``.

The tables are invented but shaped like a large Latin American city:
8 age groups x 2 genders x 6 modes x 3 scenarios, five pollution-related
causes of death, and IER-style dose-response curves tabulated on a 1 ug/m3
grid.  A synthetic WHO-like city extract for the hierarchical model is drawn
from the three-level log-normal model with fixed hyperparameters.

    python scripts/make_synthetic.py [--out DIR] [--seed N]
"""

import argparse
import json
from pathlib import Path

import numpy as np

AGES = ["0-4", "5-14", "15-29", "30-44", "45-59", "60-69", "70-79", "80+"]
GENDERS = ["female", "male"]
MODES = ["walk", "cycle", "bus", "car", "motorbike", "goods"]
SCENARIOS = ["baseline", "scenario_a", "sp2040"]
DISEASES = ["alri", "copd", "lc", "stroke", "ihd"]

# population in thousands, by age group (female, male)
POPULATION = {
    "0-4": (380, 395), "5-14": (760, 790), "15-29": (1350, 1330),
    "30-44": (1300, 1220), "45-59": (1050, 940), "60-69": (520, 430),
    "70-79": (300, 220), "80+": (160, 90),
}

# baseline minutes/day per person by mode, for children / working age / older adults
TRAVEL_BASE = {
    "child": {"walk": 18, "cycle": 1.0, "bus": 20, "car": 22, "motorbike": 0.5, "goods": 0.0},
    "adult": {"walk": 14, "cycle": 1.5, "bus": 32, "car": 38, "motorbike": 4.0, "goods": 3.0},
    "older": {"walk": 16, "cycle": 0.3, "bus": 18, "car": 20, "motorbike": 0.5, "goods": 0.2},
}
# multiplicative change of minutes relative to baseline
SCENARIO_FACTOR = {
    "baseline": {m: 1.0 for m in MODES},
    "scenario_a": {"walk": 1.2, "cycle": 2.0, "bus": 1.1, "car": 0.8, "motorbike": 0.8, "goods": 0.9},
    "sp2040": {"walk": 1.6, "cycle": 6.0, "bus": 1.2, "car": 0.4, "motorbike": 0.5, "goods": 0.6},
}

# deaths/year per 100k by disease for (0-4, 5-14, ..., 80+); male rates 20% higher
RATES = {
    "alri": [25, 2, 2, 3, 6, 20, 60, 250],
    "copd": [0, 0, 0.5, 2, 12, 50, 150, 400],
    "lc": [0, 0, 0.3, 3, 20, 60, 110, 150],
    "stroke": [0.5, 0.3, 1, 6, 30, 90, 250, 700],
    "ihd": [0.2, 0.2, 2, 15, 70, 200, 450, 1100],
}

# invented IER-shaped curves: 1 + a * (1 - exp(-gamma * (x - cf) ** delta))
IER = {
    "alri": {"alpha": 2.0, "gamma": 0.0020, "delta": 1.2, "cf": 5.0},
    "copd": {"alpha": 1.8, "gamma": 0.0018, "delta": 1.2, "cf": 5.0},
    "lc": {"alpha": 1.6, "gamma": 0.0020, "delta": 1.2, "cf": 5.0},
    "stroke": {"alpha": 1.3, "gamma": 0.0150, "delta": 0.9, "cf": 5.0},
    "ihd": {"alpha": 1.0, "gamma": 0.0400, "delta": 0.7, "cf": 5.0},
}
CURVE_MAX = 1000

# hierarchical city extract
N_REGIONS = 6
COUNTRIES_PER_REGION = [5, 7, 4, 6, 8, 5]
THETA_GLOBAL, TAU_GLOBAL, TAU_REGION, TAU_COUNTRY = 3.0, 0.5, 0.4, 0.35


def age_band(age):
    if age in ("0-4", "5-14"):
        return "child"
    if age in ("60-69", "70-79", "80+"):
        return "older"
    return "adult"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def make_tables(out):
    rows = []
    for a in AGES:
        base = TRAVEL_BASE[age_band(a)]
        for g in GENDERS:
            # men travel slightly more by car and motorbike
            gfac = {"car": 1.1, "motorbike": 1.5} if g == "male" else {}
            for m in MODES:
                for s in SCENARIOS:
                    minutes = base[m] * gfac.get(m, 1.0) * SCENARIO_FACTOR[s][m]
                    rows.append((a, g, m, s, round(minutes, 3)))
    write_csv(out / "travel.csv", ["a", "g", "m", "s", "minutes"], rows)

    write_csv(out / "population.csv", ["a", "g", "count"],
              [(a, g, POPULATION[a][i] * 1000) for a in AGES for i, g in enumerate(GENDERS)])

    rows = []
    for i, a in enumerate(AGES):
        for d in DISEASES:
            for g in GENDERS:
                pop = POPULATION[a][GENDERS.index(g)] * 1000
                rate = RATES[d][i] * (1.2 if g == "male" else 1.0)
                rows.append((a, d, g, round(pop * rate / 1e5, 2)))
    write_csv(out / "burden.csv", ["a", "d", "g", "deaths"], rows)

    (out / "curves_ier.json").write_text(json.dumps({"ier": IER}, indent=2) + "\n")
    rows = []
    x = np.arange(CURVE_MAX + 1, dtype=float)
    for d in DISEASES:
        p = IER[d]
        z = np.maximum(x - p["cf"], 0.0)
        rr = 1.0 + p["alpha"] * -np.expm1(-p["gamma"] * z ** p["delta"])
        rows.extend((d, int(xi), f"{ri:.10f}") for xi, ri in zip(x, rr))
    write_csv(out / "curves.csv", ["d", "exposure", "rr"], rows)


def make_cities(out, rng):
    rows = []
    theta_r = rng.normal(THETA_GLOBAL, TAU_GLOBAL, N_REGIONS)
    for r in range(N_REGIONS):
        for c in range(COUNTRIES_PER_REGION[r]):
            theta_c = rng.normal(theta_r[r], TAU_REGION)
            n_cities = int(rng.integers(3, 40))
            for i in range(n_cities):
                pm = float(np.exp(rng.normal(theta_c, TAU_COUNTRY)))
                rows.append((f"city_{r + 1}_{c + 1}_{i + 1}", f"country_{r + 1}_{c + 1}",
                             f"region_{r + 1}", round(pm, 2)))
    write_csv(out / "cities.csv", ["city", "country", "region", "pm25"], rows)


def make_studies(out):
    write_csv(out / "studies.csv", ["study_id", "proportion"], [(1, 0.40), (2, 0.30), (3, 0.60)])


def make_project(out):
    lognormal_xi = {"kind": "lognormal", "mu": 0.0, "sigma": 0.5}
    project = {
        "tables": {
            "travel": "travel.csv",
            "population": "population.csv",
            "burden": "burden.csv",
            "curves": "curves.csv",
            "baseline": "baseline",
        },
        "parameters": {
            "eta": {"kind": "lognormal", "mu": 3.0, "sigma": 1.0},
            "zeta": {"kind": "beta", "a": 2.0, "b": 3.0},
            "alpha": {"kind": "dirichlet", "concentration": [32, 4, 4, 60],
                      "labels": ["car", "bus", "motorbike", "goods"]},
            "lambda_walk": {"kind": "lognormal", "mu": 1.0, "sigma": 1.0},
            "lambda_cycle": {"kind": "lognormal", "mu": 2.0, "sigma": 0.4},
            "xi_copd": lognormal_xi,
            "xi_lc": lognormal_xi,
            "xi_stroke": lognormal_xi,
            "xi_ihd": lognormal_xi,
        },
        "outputs": {"deaths_averted:sp2040": 1.0},
        "samples": 5000,
        "seed": 20190601,
        "threads": 1,
        "bootstrap": 200,
        "catalog": {
            "eta": {"cost": 5, "kind": "literature+modelling"},
            "zeta": {"cost": 5, "kind": "literature+modelling"},
            "alpha": {"cost": 2, "kind": "literature+modelling"},
            "lambda_walk": {"cost": 3, "kind": "literature+modelling"},
            "lambda_cycle": {"cost": 2, "kind": "literature+modelling"},
            "xi_stroke": {"cost": 5, "kind": "literature+modelling"},
            "xi_ihd": {"cost": 5, "kind": "literature+modelling"},
            "xi_lc": {"cost": 5, "kind": "literature+modelling"},
            "xi_copd": {"cost": 5, "kind": "literature+modelling"},
        },
        "budget": 10,
        "updates": {
            "zeta": {"method": "meta-analysis", "studies": "studies.csv"},
            "eta": {"method": "hierarchical", "cities": "cities.csv", "target": "country_2_1"},
        },
        "mcmc": {"chains": 4, "iterations": 5000},
    }
    (out / "project.json").write_text(json.dumps(project, indent=2) + "\n")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default_out = Path(__file__).resolve().parents[1] / "src" / "voi" / "data" / "synthetic"
    parser.add_argument("--out", type=Path, default=default_out)
    parser.add_argument("--seed", type=int, default=411)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    make_tables(args.out)
    make_cities(args.out, np.random.default_rng(args.seed))
    make_studies(args.out)
    make_project(args.out)
    print(f"wrote synthetic project to {args.out}")


if __name__ == "__main__":
    main()
