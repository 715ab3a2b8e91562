"""Choose which parameters to research under a person-day budget.

Selection is greedy by EVPPI per unit cost, with the usual safeguard that a
single affordable parameter worth more than the whole greedy set replaces it
(this makes greedy exact on two-parameter catalogs).  For catalogs of up to
``EXACT_LIMIT`` parameters the exact 0/1 knapsack optimum is also computed
and any shortfall of the greedy choice is reported alongside it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .evppi import UPPER_BOUND_NOTE

RESEARCH_KINDS = ("literature+modelling", "primary data collection", "elicitation")
EXACT_LIMIT = 15
NO_RESEARCH_NOTE = (
    "no parameter has positive EVPPI; further research on them is not worthwhile "
    "for reducing output uncertainty"
)


@dataclass(frozen=True)
class CatalogEntry:
    cost: float
    kind: str = "literature+modelling"
    notes: str = ""

    def __post_init__(self):
        if not (isinstance(self.cost, (int, float)) and math.isfinite(self.cost) and self.cost > 0):
            raise ConfigError(f"research cost must be positive, got {self.cost!r}")
        if self.kind not in RESEARCH_KINDS:
            raise ConfigError(f"unknown research kind {self.kind!r}; expected one of {RESEARCH_KINDS}")


def catalog_from_dict(spec: dict) -> dict:
    out = {}
    for name, entry in spec.items():
        if isinstance(entry, (int, float)):
            entry = {"cost": entry}
        out[name] = CatalogEntry(float(entry["cost"]), entry.get("kind", "literature+modelling"),
                                 entry.get("notes", ""))
    return out


@dataclass
class Selection:
    selected: list
    total_cost: float
    bound: float
    budget: float
    ranking: list
    exact: list | None = None
    exact_bound: float | None = None
    notes: list = field(default_factory=list)

    @property
    def gap(self) -> float | None:
        """Exact optimum minus greedy bound; ``None`` when the exact check was skipped."""
        return None if self.exact_bound is None else self.exact_bound - self.bound

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "total_cost": self.total_cost,
            "budget": self.budget,
            "evppi_bound": self.bound,
            "bound_is_upper_bound": True,
            "ranking": self.ranking,
            "exact_selected": self.exact,
            "exact_bound": self.exact_bound,
            "greedy_gap": self.gap,
            "notes": list(self.notes),
        }


def _value(est):
    return est.evppi_abs if hasattr(est, "evppi_abs") else float(est)


def prioritize(estimates, catalog: dict, budget: float) -> Selection:
    """Pick parameters for further research.

    ``estimates`` maps parameter name to an EVPPI value or an object with an
    ``evppi_abs`` attribute (a sequence of such objects with ``target`` names
    is also accepted).  The reported bound is the sum of the selected EVPPIs:
    a ceiling, since real research yields imperfect information.
    """
    if not catalog:
        raise ConfigError("research catalog is empty")
    if not (math.isfinite(budget) and budget > 0):
        raise ConfigError(f"budget must be positive, got {budget!r}")
    if not isinstance(estimates, dict):
        estimates = {e.target: e for e in estimates}
    values = {name: max(_value(e), 0.0) for name, e in estimates.items()}
    missing = sorted(set(values) - set(catalog))
    if missing:
        raise ConfigError(f"parameters missing from the research catalog: {', '.join(missing)}")

    order = sorted(values, key=lambda n: (-values[n] / catalog[n].cost, -values[n], n))
    ranking = [{"parameter": n, "evppi": values[n], "cost": catalog[n].cost,
                "ratio": values[n] / catalog[n].cost} for n in order]
    chosen, spent = [], 0.0
    for name in order:
        if values[name] <= 0:
            continue
        if spent + catalog[name].cost <= budget:
            chosen.append(name)
            spent += catalog[name].cost
    bound = sum(values[n] for n in chosen)
    for name in order:
        if catalog[name].cost <= budget and values[name] > bound:
            chosen, spent, bound = [name], catalog[name].cost, values[name]
    sel = Selection(chosen, spent, bound, float(budget), ranking, notes=[UPPER_BOUND_NOTE])
    if not any(v > 0 for v in values.values()):
        sel.notes.append(NO_RESEARCH_NOTE)
    if len(values) <= EXACT_LIMIT:
        sel.exact, sel.exact_bound = exact_knapsack(values, {n: catalog[n].cost for n in values}, budget)
        if sel.gap is not None and sel.gap > 1e-12 * max(1.0, sel.exact_bound):
            sel.notes.append(
                f"greedy selection is {sel.gap:.6g} below the exact optimum {sorted(sel.exact)}"
            )
    return sel


def exact_knapsack(values: dict, costs: dict, budget: float):
    """Exhaustive 0/1 knapsack; ties prefer fewer items, then name order."""
    names = sorted(n for n in values if values[n] > 0)
    best, best_val = [], 0.0
    for k in range(1, len(names) + 1):
        for combo in itertools.combinations(names, k):
            if sum(costs[n] for n in combo) > budget:
                continue
            v = sum(values[n] for n in combo)
            if v > best_val:
                best, best_val = list(combo), v
    return best, best_val
