"""Project configuration and the end-to-end prioritisation loop.

A run propagates the prior, estimates EVPPI for every parameter, selects
research under the budget, performs the configured Bayesian updates for the
selected parameters, and re-runs the model with the posteriors.  Every
artifact is written atomically and hashed into ``manifest.json``; nothing
time-dependent is recorded, so identical configs give identical bytes.
"""

from __future__ import annotations

import copy
import hashlib
import importlib.metadata
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy
from scipy import stats

from . import bayes, engine, evppi, model
from .csvio import atomic_write_text
from .distributions import (Beta, Dirichlet, Distribution, Empirical, HalfNormal, Rng, from_dict, quantile,
                            read_pool_csv)
from .errors import ConfigError, ParameterDomainError, SchemaError
from .mcmc import McmcConfig
from .prioritize import catalog_from_dict, prioritize

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
DENSITY_POINTS = 200
PRIOR_DIR, UPDATE_DIR, UPDATED_DIR = "prior", "updates", "updated"


def load_schema() -> dict:
    return json.loads(resources.files("voi").joinpath("schema/project.schema.json").read_text())


def _json_line(text, exc):
    # best-effort line number of the offending key in the config text
    for part in reversed(list(exc.absolute_path)):
        if isinstance(part, str):
            needle = json.dumps(part) + ":"
            for i, line in enumerate(text.splitlines(), start=1):
                if needle in line.replace('" :', '":'):
                    return i
    return None


@dataclass
class Project:
    """Validated project configuration; paths are resolved against ``base_dir``."""

    raw: dict
    base_dir: Path
    tables: model.ConstantTables
    curves: dict
    dists: dict
    outputs: dict
    catalog: dict
    budget: float
    updates: dict = field(default_factory=dict)
    samples: int = engine.DEFAULT_SAMPLES
    seed: int = 0
    threads: int = 1
    bootstrap: int = evppi.DEFAULT_BOOTSTRAP
    mcmc: McmcConfig = McmcConfig()
    update_policy: str = "selected"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_project(path, seed=None, samples=None, threads=None) -> Project:
    """Read, validate and resolve a project file; keyword arguments override it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    return project_from_dict(raw, path.parent, seed=seed, samples=samples, threads=threads, source=path, text=text)


def project_from_dict(raw: dict, base_dir, seed=None, samples=None, threads=None, source="<config>",
                      text="") -> Project:
    raw = copy.deepcopy(raw)
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaError(source, _json_line(text, e), f"{where}: {e.message}")
    for key, value in (("seed", seed), ("samples", samples), ("threads", threads)):
        if value is not None:
            raw[key] = int(value)
    base_dir = Path(base_dir)

    t = raw["tables"]
    rel = lambda p: Path(p) if Path(p).is_absolute() else base_dir / p  # noqa: E731
    tables = model.load_tables(rel(t["travel"]), rel(t["population"]), rel(t["burden"]),
                               baseline=t.get("baseline", "baseline"))
    curves = model.load_curves(rel(t["curves"]))
    missing = [d for d in tables.diseases if d not in curves]
    if missing:
        raise ConfigError(f"no dose-response curve for: {', '.join(missing)}")

    dists = {}
    for name, spec in raw["parameters"].items():
        try:
            dists[name] = from_dict(spec, base_dir)
        except ParameterDomainError as exc:
            raise ConfigError(f"parameters/{name}: {exc}") from None
    try:
        engine._column_layout(dists, tables.diseases)
    except (ParameterDomainError, KeyError, ValueError) as exc:
        raise ConfigError(f"parameters: {exc}") from None

    scenarios = [s for s in tables.scenarios if s != tables.baseline]
    if "outputs" in raw:
        outputs = raw["outputs"]
        outputs = {outputs: 1.0} if isinstance(outputs, str) else dict(outputs)
    elif "scenario" in raw:
        outputs = {f"deaths_averted:{raw['scenario']}": 1.0}
    else:
        outputs = {f"deaths_averted:{s}": 1.0 for s in scenarios}
    if "scenario" in raw and raw["scenario"] not in tables.scenarios:
        raise ConfigError(f"scenario {raw['scenario']!r} not in tables (have {', '.join(tables.scenarios)})")
    known = set(engine.output_names(tables))
    for name in outputs:
        if name not in known:
            raise ConfigError(f"unknown output {name!r}; available: {', '.join(sorted(known))}")
    if not any(w > 0 for w in outputs.values()):
        raise ConfigError("at least one output weight must be positive")

    catalog = catalog_from_dict(raw["catalog"])
    groups = _parameter_groups(dists)
    absent = [g for g in groups if g not in catalog]
    if absent:
        raise ConfigError(f"catalog has no cost for: {', '.join(absent)}")
    updates = raw.get("updates", {})
    for name in updates:
        if name not in dists:
            raise ConfigError(f"updates/{name}: not a model parameter")
    m = raw.get("mcmc", {})
    return Project(
        raw=raw, base_dir=base_dir, tables=tables, curves=curves, dists=dists, outputs=outputs,
        catalog=catalog, budget=float(raw["budget"]), updates=updates,
        samples=int(raw.get("samples", engine.DEFAULT_SAMPLES)), seed=int(raw.get("seed", 0)),
        threads=int(raw.get("threads", 1)), bootstrap=int(raw.get("bootstrap", evppi.DEFAULT_BOOTSTRAP)),
        mcmc=McmcConfig(chains=int(m.get("chains", 4)), iterations=int(m.get("iterations", 5000)),
                        seed=int(raw.get("seed", 0)), threads=int(raw.get("threads", 1))),
        update_policy=raw.get("update_policy", "selected"),
    )


def _parameter_groups(dists) -> list:
    # a Dirichlet "alpha" or separate alpha_<mode> entries both form the group "alpha"
    return sorted({"alpha" if n.startswith(engine.ALPHA_PREFIX) else n for n in dists})


# -- stages -----------------------------------------------------------------------


def simulate(project: Project, dists=None) -> engine.SampleMatrix:
    return engine.propagate(dists or project.dists, project.tables, project.curves, R=project.samples,
                            rng=Rng(project.seed), threads=project.threads)


def estimate(project: Project, m: engine.SampleMatrix) -> list:
    return evppi.evppi_all(m, project.outputs, bootstrap=project.bootstrap, rng=Rng(project.seed),
                           threads=project.threads)


def output_sd(project: Project, m: engine.SampleMatrix) -> float:
    return math.sqrt(engine.generalized_variance(m, project.outputs))


def run_update(project: Project, name: str):
    """Perform the configured Bayesian update for ``name``; returns ``(posterior, draw_name)``."""
    spec = project.updates.get(name)
    if spec is None:
        raise ConfigError(f"no update configured for {name!r}")
    if spec["method"] == "meta-analysis":
        data = bayes.read_studies(project.path(spec["studies"]))
        prior = project.dists[name]
        if not isinstance(prior, Beta):
            raise ConfigError(f"meta-analysis update of {name!r} needs a beta prior, got {prior.kind}")
        post = bayes.meta_analysis_zeta(data, prior, HalfNormal(spec.get("prior_tau_sd", 1.0)), project.mcmc)
        return post, "zeta"
    data = bayes.read_cities(project.path(spec["cities"]))
    post = bayes.hierarchical_eta(data, spec["target"], spec.get("target_region"), project.mcmc)
    return post, "eta"


def _write_stage(directory: Path, project: Project, m: engine.SampleMatrix, estimates) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    m.to_csv(directory / "samples.csv")
    summaries = engine.summarize(m)
    engine.write_summary(summaries, directory / "summary.json")
    costs = {k: v.cost for k, v in project.catalog.items()}
    evppi.report_csv(evppi.table_order(estimates), costs, directory / "evppi_report.csv")
    return summaries


def run_pipeline(project: Project, out_dir) -> Path:
    """Run every stage and return the run directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = _attach_log(out / "run.log")
    try:
        atomic_write_text(out / "config.json", json.dumps(project.raw, indent=2, sort_keys=True) + "\n")

        m0 = simulate(project)
        est0 = estimate(project, m0)
        _write_stage(out / PRIOR_DIR, project, m0, est0)

        sel = prioritize(est0, project.catalog, project.budget)
        todo = [n for n in project.updates if project.update_policy == "all" or n in sel.selected]
        skipped = [n for n in sel.selected if n not in project.updates]
        notes = list(sel.notes)
        if skipped:
            notes.append(f"selected but no update method configured: {', '.join(skipped)}")
        selection = sel.to_dict()
        selection["notes"] = notes
        selection["updated"] = todo
        atomic_write_text(out / "selection.json", json.dumps(selection, indent=2, sort_keys=True) + "\n")

        result = {"prior_sd": output_sd(project, m0)}
        if todo:
            upd_dir = out / UPDATE_DIR
            upd_dir.mkdir(exist_ok=True)
            diagnostics = {}
            new_dists = dict(project.dists)
            for name in sorted(todo):
                post, draw = run_update(project, name)
                bayes.write_posterior(post, draw, upd_dir, label=name)
                diagnostics[name] = post.diagnostics()
                new_dists[name] = Empirical(bayes.to_distribution(post, draw).pool,
                                            source=f"{UPDATE_DIR}/posterior_{name}.csv")
            atomic_write_text(upd_dir / "diagnostics.json", json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
            m1 = simulate(project, new_dists)
            est1 = estimate(project, m1)
            _write_stage(out / UPDATED_DIR, project, m1, est1)
            result["updated_sd"] = output_sd(project, m1)
        atomic_write_text(out / "comparison.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    finally:
        _detach_log(handler)
    write_manifest(project, out)
    return out


def _attach_log(path):
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("voi").addHandler(handler)
    return handler


def _detach_log(handler):
    logging.getLogger("voi").removeHandler(handler)
    handler.close()


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    try:
        own = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        own = "unknown"
    return {"artifact": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(project: Project, out: Path) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "seed": project.seed,
        "config_hash": project.config_hash,
        "versions": versions(),
        "artifacts": {p.relative_to(out).as_posix(): _sha256(p) for p in files},
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


# -- reporting ----------------------------------------------------------------------


def _require(path: Path) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing run artifact: {path}")
    return path


def report_table(rows, costs: dict) -> tuple[str, str]:
    """EVPPI table as aligned text and as CSV, in the canonical parameter order."""
    by_name = {r["parameter"]: r for r in rows}
    order = [n for n in evppi.TABLE_ORDER if n in by_name] + sorted(n for n in by_name if n not in evppi.TABLE_ORDER)
    csv_lines = ["parameter,sd_reduction,pct_explained,cost_person_days"]
    width = max(len("parameter"), *(len(n) for n in order)) if order else len("parameter")
    text = [f"{'parameter':<{width}}  {'sd_reduction':>12}  {'pct_explained':>13}  {'cost':>6}"]

    def cell(v, fmt):
        return "" if v is None else format(v, fmt)

    for n in order:
        r = by_name[n]
        cost = costs.get(n, r.get("cost_person_days"))
        csv_lines.append(f"{n},{cell(r['sd_reduction'], '.3f')},{cell(r['pct_explained'], '.3f')},{cell(cost, 'g')}")
        text.append(f"{n:<{width}}  {cell(r['sd_reduction'], '12.3f')}  {cell(r['pct_explained'], '13.2f')}  "
                    f"{cell(cost, '6g')}")
    text.append("")
    text.append(evppi.UPPER_BOUND_NOTE)
    return "\n".join(text) + "\n", "\n".join(csv_lines) + "\n"


def density_table(prior: Distribution, pool=None, points=DENSITY_POINTS) -> str:
    """CSV of prior (and, if given, kernel-smoothed posterior) densities on a shared grid."""
    lo, hi = quantile(prior, 0.001), quantile(prior, 0.999)
    if pool is not None:
        lo = min(lo, float(np.min(pool)))
        hi = max(hi, float(np.max(pool)))
    x = np.linspace(lo, hi, points)
    prior_d = np.exp(prior.logpdf(x))
    if pool is None:
        rows = ["x,prior_density"] + [f"{a!r},{b!r}" for a, b in zip(x.tolist(), prior_d.tolist())]
    else:
        post_d = stats.gaussian_kde(pool)(x)
        rows = ["x,prior_density,posterior_density"] + [
            f"{a!r},{b!r},{c!r}" for a, b, c in zip(x.tolist(), prior_d.tolist(), post_d.tolist())]
    return "\n".join(rows) + "\n"


def report(run_dir, out_dir=None) -> dict:
    """Write ``table.txt``/``table.csv`` and ``density_<param>.csv`` files; returns their paths."""
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run / "report"
    config = json.loads(_require(run / "config.json").read_text())
    rows = evppi.read_report_csv(_require(run / PRIOR_DIR / "evppi_report.csv"))
    costs = {k: (v if isinstance(v, (int, float)) else v["cost"]) for k, v in config["catalog"].items()}
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    text, csv_text = report_table(rows, costs)
    atomic_write_text(out / "table.txt", text)
    atomic_write_text(out / "table.csv", csv_text)
    written["table.txt"] = out / "table.txt"
    written["table.csv"] = out / "table.csv"
    updated_report = run / UPDATED_DIR / "evppi_report.csv"
    if updated_report.is_file():
        text, csv_text = report_table(evppi.read_report_csv(updated_report), costs)
        atomic_write_text(out / "table_updated.txt", text)
        atomic_write_text(out / "table_updated.csv", csv_text)
        written["table_updated.txt"] = out / "table_updated.txt"
        written["table_updated.csv"] = out / "table_updated.csv"
    for name in sorted(config.get("updates", {})):
        spec = config["parameters"].get(name)
        if spec is None or spec.get("kind") == "empirical":
            continue
        prior = from_dict(spec, run)
        if isinstance(prior, Dirichlet):
            continue
        post_path = run / UPDATE_DIR / f"posterior_{name}.csv"
        pool = read_pool_csv(post_path) if post_path.is_file() else None
        atomic_write_text(out / f"density_{name}.csv", density_table(prior, pool))
        written[f"density_{name}.csv"] = out / f"density_{name}.csv"
    return written
