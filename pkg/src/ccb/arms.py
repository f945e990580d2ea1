"""Arm catalogues: every intervention, minimal intervention sets, configured POMIS."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .scm import Intervention, ScmTemplate, validate_template, TemplateError

InterventionSet = frozenset  # of endogenous variable names
MODES = ("all", "mis", "pomis")


@dataclass(frozen=True)
class Arm:
    id: int
    intervention: Intervention

    @property
    def variables(self) -> tuple[str, ...]:
        return self.intervention.targets

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.intervention.assignments)

    def __str__(self):
        return str(self.intervention)


@dataclass(frozen=True)
class ArmTable:
    arms: tuple[Arm, ...]
    mode: str = "all"
    pomis_sets: tuple[InterventionSet, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown arm mode {self.mode!r}")
        ids = [a.id for a in self.arms]
        if ids != list(range(len(ids))):
            raise ValueError("arm ids must be dense from 0")
        seen = [a.intervention for a in self.arms]
        if len(set(seen)) != len(seen):
            raise ValueError("arm table contains duplicate interventions")

    def __len__(self):
        return len(self.arms)

    def __iter__(self):
        return iter(self.arms)

    def __getitem__(self, arm_id: int) -> Arm:
        return self.arms[arm_id]

    @property
    def interventions(self) -> list[Intervention]:
        return [a.intervention for a in self.arms]

    def index_of(self, intervention: Intervention) -> int:
        return self.interventions.index(intervention)

    def is_pomis(self, arm: Arm) -> bool:
        if self.mode == "pomis":
            return True
        return frozenset(arm.variables) in self.pomis_sets


def arms_from_sets(
    sets: Iterable[Iterable[str]], domains: Mapping[str, Sequence[int]], order: Sequence[str], mode: str
) -> ArmTable:
    """Expand intervention sets over the cross-product of their domains."""
    arms = []
    for s in sets:
        names = [v for v in order if v in set(s)]
        for values in itertools.product(*(domains[v] for v in names)):
            arms.append(Arm(len(arms), Intervention(tuple(zip(names, values)))))
    return ArmTable(tuple(arms), mode)


def enumerate_all_arms(variables: Sequence[str], domains: Mapping[str, Sequence[int]]) -> ArmTable:
    """do(∅) first, then subsets by size in variable order, values in product order."""
    subsets = [c for k in range(len(variables) + 1) for c in itertools.combinations(variables, k)]
    return arms_from_sets(subsets, domains, variables, "all")


def slice_diagram(template: ScmTemplate, t: int = 0) -> nx.DiGraph:
    """Causal diagram of one slice: directed intra-slice edges between endogenous variables.

    Lag-1 parents are left out, as they act as fixed context for the slice.
    Shared exogenous parents are recorded as bidirected pairs in
    ``graph.graph["bidirected"]``.
    """
    g = nx.DiGraph()
    g.add_nodes_from(template.variables)
    users: dict[str, list[str]] = {}
    for name, fn in template.functions(t).items():
        for p, lag in fn.parents:
            if p in template.variables and lag == 0:
                g.add_edge(p, name)
            elif p in template.exogenous:
                users.setdefault(p, []).append(name)
    g.graph["bidirected"] = {
        frozenset(pair) for names in users.values() for pair in itertools.combinations(names, 2)
    }
    return g


def _sort_sets(sets, order):
    rank = {v: i for i, v in enumerate(order)}
    return sorted(sets, key=lambda s: (len(s), sorted(rank[v] for v in s)))


def enumerate_mis(graph: nx.DiGraph, reward: str) -> list[InterventionSet]:
    """All minimal intervention sets for ``reward``.

    S qualifies when S is a subset of the ancestors of the reward and every
    member keeps a directed path to the reward avoiding the rest of S.
    """
    if reward not in graph:
        raise ValueError(f"reward {reward} is not in the graph")
    ancestors = [v for v in graph.nodes if v in nx.ancestors(graph, reward)]
    found = []
    for k in range(len(ancestors) + 1):
        for combo in itertools.combinations(ancestors, k):
            s = set(combo)
            if all(nx.has_path(graph.subgraph(set(graph) - (s - {x})), x, reward) for x in s):
                found.append(frozenset(s))
    return _sort_sets(found, list(graph.nodes))


def mis_arms(template: ScmTemplate) -> ArmTable:
    mis = enumerate_mis(slice_diagram(template, 0), template.reward)
    return arms_from_sets(mis, template.variables, list(template.variables), "mis")


def pomis_from_config(
    config_sets: Iterable[Iterable[str]],
    mis: Sequence[InterventionSet],
    domains: Mapping[str, Sequence[int]],
    order: Sequence[str] | None = None,
) -> ArmTable:
    """Arm table over user-configured POMIS, each of which must be a MIS."""
    sets = [frozenset(s) for s in config_sets]
    mis = set(mis)
    for s in sets:
        if s not in mis:
            raise ValueError(f"configured set {{{', '.join(sorted(s))}}} is not a minimal intervention set")
    order = list(domains) if order is None else list(order)
    table = arms_from_sets(sets, domains, order, "pomis")
    return ArmTable(table.arms, "pomis", tuple(sets))


@dataclass
class MisInvarianceReport:
    ok: bool
    per_slice: list[list[InterventionSet]] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def check_mis_time_invariance(template: ScmTemplate, slices: int) -> MisInvarianceReport:
    """Compare the MIS of every slice's induced subgraph with slice 0."""
    report = validate_template(template)
    if not report.ok:
        raise TemplateError(report.issues)
    per_slice = [enumerate_mis(slice_diagram(template, t), template.reward) for t in range(slices)]
    base = set(per_slice[0]) if per_slice else set()
    return MisInvarianceReport(all(set(m) == base for m in per_slice), per_slice)


def empirical_optimal_arm(
    template: ScmTemplate, arm_table: ArmTable, history: Sequence[Intervention] = (), window: str = "lag1"
) -> int:
    from .inference import exact_reward_table

    best = exact_reward_table(template, arm_table, history, window).best
    if best is None:
        raise ValueError("empty arm table has no optimal arm")
    return best


def write_arm_table_csv(table: ArmTable, path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm_id", "variables", "values", "pomis_flag"])
        for a in table:
            w.writerow([
                a.id,
                ";".join(a.variables),
                ";".join(str(v) for v in a.values),
                int(table.is_pomis(a)),
            ])
    finally:
        if own:
            fh.close()


def read_arm_table_csv(path, mode: str = "all") -> ArmTable:
    arms, pomis = [], []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            names = [v for v in r["variables"].split(";") if v]
            values = [int(v) for v in r["values"].split(";") if v]
            arm = Arm(int(r["arm_id"]), Intervention(tuple(zip(names, values))))
            arms.append(arm)
            if r["pomis_flag"] == "1" and frozenset(names) not in pomis:
                pomis.append(frozenset(names))
    return ArmTable(tuple(arms), mode, tuple(pomis))
