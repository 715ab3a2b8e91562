"""Command-line interface: ``voi <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 MCMC convergence
failure, 4 model-evaluation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema

from . import bayes, engine, evppi, pipeline
from .csvio import atomic_write_text
from .distributions import Beta, HalfNormal, Rng
from .errors import ConfigError, ConvergenceError, ModelEvaluationError, VoiError
from .mcmc import McmcConfig
from .prioritize import catalog_from_dict, prioritize

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_MODEL = 0, 2, 3, 4
log = logging.getLogger("voi")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="project JSON file")
    g.add_argument("--seed", type=int, help="override the configured seed")
    g.add_argument("--out", type=Path, help="output directory (default: voi-out)")
    g.add_argument("--samples", type=int, help="override the number of Monte Carlo rows")
    g.add_argument("--threads", type=int, help="worker threads")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="voi", description="Value-of-information analysis for health impact models.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("simulate", parents=[common], help="propagate the prior through the model")

    p = sub.add_parser("evppi", parents=[common], help="estimate EVPPI from a samples file")
    p.add_argument("--input", type=Path, help="samples.csv (default: <out>/samples.csv)")
    p.add_argument("--output", action="append", help="output column; repeat for an unweighted sum")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples for standard errors")

    p = sub.add_parser("update-meta", parents=[common], help="meta-analysis update of a proportion")
    p.add_argument("--studies", type=Path, help="studies.csv (default: from the config)")
    p.add_argument("--param", default="zeta")
    p.add_argument("--prior-a", type=float, default=2.0)
    p.add_argument("--prior-b", type=float, default=3.0)
    p.add_argument("--prior-tau-sd", type=float, default=1.0)
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("update-hier", parents=[common], help="hierarchical update of background PM2.5")
    p.add_argument("--cities", type=Path, help="cities.csv (default: from the config)")
    p.add_argument("--param", default="eta")
    p.add_argument("--target", help="country to predict")
    p.add_argument("--target-region", help="region of a target country without cities")
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)

    p = sub.add_parser("prioritize", parents=[common], help="select research under the budget")
    p.add_argument("--report", type=Path, help="evppi_report.csv (default: <out>/evppi_report.csv)")
    p.add_argument("--budget", type=float, help="override the configured budget")

    p = sub.add_parser("report", parents=[common], help="EVPPI table and density CSVs for a run")
    p.add_argument("--run", type=Path, help="run directory (default: --out)")

    sub.add_parser("run", parents=[common], help="full pipeline: simulate, evppi, prioritize, update, rerun")
    return parser


def _out(args) -> Path:
    return args.out if args.out is not None else Path("voi-out")


def _project(args) -> pipeline.Project:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return pipeline.load_project(args.config, seed=args.seed, samples=args.samples, threads=args.threads)


def _raw_config(args) -> dict:
    if args.config is None:
        return {}
    try:
        return json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None


def _mcmc_config(args, raw) -> McmcConfig:
    m = raw.get("mcmc", {})
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    return McmcConfig(chains=args.chains or m.get("chains", 4), iterations=args.iterations or m.get("iterations", 5000),
                      seed=int(seed), threads=args.threads or raw.get("threads", 1))


def _update_spec(args, raw, method):
    spec = raw.get("updates", {}).get(args.param, {})
    if spec and spec.get("method") != method:
        raise ConfigError(f"config updates {args.param!r} with {spec.get('method')!r}, not {method!r}")
    return spec


def _resolve(args, value):
    p = Path(value)
    if p.is_absolute() or args.config is None:
        return p
    return args.config.parent / p


def cmd_simulate(args):
    project = _project(args)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    m = pipeline.simulate(project)
    m.to_csv(out / "samples.csv")
    summaries = engine.summarize(m)
    engine.write_summary(summaries, out / "summary.json")
    for name, s in summaries.items():
        print(f"{name}: mean {s.mean:.4g}  sd {s.sd:.4g}  (MCSE of mean {s.mcse_mean:.2g}, R={s.R})")


def cmd_evppi(args):
    out = _out(args)
    path = args.input or out / "samples.csv"
    m = engine.SampleMatrix.from_csv(path)
    raw = _raw_config(args)
    if args.output:
        outputs = {o: 1.0 for o in args.output}
    elif args.config is not None:
        outputs = _project(args).outputs
    else:
        outputs = {o: 1.0 for o in m.outputs if o.startswith("deaths_averted:")}
    bootstrap = args.bootstrap if args.bootstrap is not None else raw.get("bootstrap", evppi.DEFAULT_BOOTSTRAP)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    estimates = evppi.evppi_all(m, outputs, bootstrap=bootstrap, rng=Rng(int(seed)), threads=args.threads or 1)
    costs = {k: c.cost for k, c in catalog_from_dict(raw["catalog"]).items()} if "catalog" in raw else {}
    out.mkdir(parents=True, exist_ok=True)
    print(evppi.report_csv(evppi.table_order(estimates), costs, out / "evppi_report.csv"), end="")
    print(evppi.UPPER_BOUND_NOTE)


def cmd_update_meta(args):
    raw = _raw_config(args)
    spec = _update_spec(args, raw, "meta-analysis")
    studies = args.studies or (_resolve(args, spec["studies"]) if "studies" in spec else None)
    if studies is None:
        raise ConfigError("give --studies or configure updates.<param>.studies")
    prior = Beta(args.prior_a, args.prior_b)
    if args.param in raw.get("parameters", {}) and raw["parameters"][args.param].get("kind") == "beta":
        p = raw["parameters"][args.param]
        prior = Beta(p["a"], p["b"])
    tau_sd = spec.get("prior_tau_sd", args.prior_tau_sd)
    post = bayes.meta_analysis_zeta(bayes.read_studies(studies), prior, HalfNormal(tau_sd), _mcmc_config(args, raw))
    _write_update(args, post, "zeta")


def cmd_update_hier(args):
    raw = _raw_config(args)
    spec = _update_spec(args, raw, "hierarchical")
    cities = args.cities or (_resolve(args, spec["cities"]) if "cities" in spec else None)
    target = args.target or spec.get("target")
    if cities is None or target is None:
        raise ConfigError("give --cities and --target, or configure updates.<param>")
    post = bayes.hierarchical_eta(bayes.read_cities(cities), target, args.target_region or spec.get("target_region"),
                                  _mcmc_config(args, raw))
    _write_update(args, post, "eta")


def _write_update(args, post, draw):
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    path = bayes.write_posterior(post, draw, out, label=args.param)
    bayes.write_diagnostics(post, out / "diagnostics.json")
    pool = post.pooled(draw)
    print(f"{args.param}: posterior mean {pool.mean():.4g}  sd {pool.std(ddof=1):.4g}  "
          f"R-hat {post.rhat[draw]:.3f}  ESS {post.ess[draw]:.0f}")
    print(f"wrote {path}")


def cmd_prioritize(args):
    raw = _raw_config(args)
    if "catalog" not in raw:
        raise ConfigError("--config with a research catalog is required")
    budget = args.budget if args.budget is not None else raw.get("budget")
    if budget is None:
        raise ConfigError("no budget: set it in the config or pass --budget")
    out = _out(args)
    rows = evppi.read_report_csv(args.report or out / "evppi_report.csv")
    values = {r["parameter"]: (r["evppi_abs"] if r.get("evppi_abs") is not None else r.get("evppi_loss") or 0.0)
              for r in rows}
    sel = prioritize(values, catalog_from_dict(raw["catalog"]), float(budget))
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "selection.json", json.dumps(sel.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"selected: {', '.join(sel.selected) or '(none)'}  cost {sel.total_cost:g} of {sel.budget:g}")
    print(f"EVPPI bound: {sel.bound:.6g}")
    for note in sel.notes:
        print(f"note: {note}")


def cmd_report(args):
    run = args.run or _out(args)
    written = pipeline.report(run)
    print(Path(written["table.txt"]).read_text(), end="")
    for name, path in written.items():
        if name.startswith("density_"):
            print(f"wrote {path}")


def cmd_run(args):
    project = _project(args)
    out = pipeline.run_pipeline(project, _out(args))
    comparison = json.loads((out / "comparison.json").read_text())
    selection = json.loads((out / "selection.json").read_text())
    print(f"prior output sd: {comparison['prior_sd']:.4g}")
    print(f"selected for research: {', '.join(selection['selected']) or '(none)'}")
    if "updated_sd" in comparison:
        print(f"updated output sd: {comparison['updated_sd']:.4g}")
    print(f"run directory: {out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "evppi": cmd_evppi,
    "update-meta": cmd_update_meta,
    "update-hier": cmd_update_hier,
    "prioritize": cmd_prioritize,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ModelEvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (VoiError, jsonschema.ValidationError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
