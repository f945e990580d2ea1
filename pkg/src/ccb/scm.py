"""Discrete structural causal models propagated in time.

A :class:`ScmTemplate` describes one time slice of a dynamic SCM: the
endogenous variables with their finite domains, the exogenous noise terms
and two sets of structural lookup tables, one for slice 0 and one for every
later slice (which may read lag-1 parents from the previous slice).
:func:`unroll` turns a template into an :class:`UnrolledScm` over a fixed
number of slices, and :func:`mutilate` applies the do-operator to a slice.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

Ref = tuple[str, int]  # (variable name, lag); lag is 0 or 1
Node = tuple[str, int]  # (variable name, absolute slice)

PMF_TOL = 1e-12


class TemplateError(ValueError):
    """Raised when an SCM template fails validation."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("invalid SCM template: " + "; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class ExogenousSpec:
    name: str
    values: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def bernoulli(cls, name: str, p: float) -> "ExogenousSpec":
        return cls(name, (0, 1), (1.0 - p, p))

    def prob(self, value: int) -> float:
        return self.probs[self.values.index(value)]


@dataclass(frozen=True, eq=False)
class StructuralTable:
    """Lookup-table mechanism ``output = table[parent values]``.

    ``parents`` is an ordered tuple of ``(name, lag)`` references. Endogenous
    parents carry lag 0 (same slice) or 1 (previous slice); exogenous parents
    always carry lag 0.
    """

    output: str
    parents: tuple[Ref, ...]
    table: Mapping[tuple[int, ...], int]

    @classmethod
    def constant(cls, output: str, value: int) -> "StructuralTable":
        return cls(output, (), {(): int(value)})

    def __call__(self, parent_values: tuple[int, ...]) -> int:
        return self.table[parent_values]

    @property
    def is_constant(self) -> bool:
        return not self.parents

    def __eq__(self, other):
        if not isinstance(other, StructuralTable):
            return NotImplemented
        return (
            self.output == other.output
            and self.parents == other.parents
            and dict(self.table) == dict(other.table)
        )

    def __hash__(self):
        return hash((self.output, self.parents, tuple(sorted(self.table.items()))))


@dataclass(frozen=True)
class ScmTemplate:
    variables: Mapping[str, tuple[int, ...]]
    reward: str
    exogenous: Mapping[str, ExogenousSpec]
    functions_t0: Mapping[str, StructuralTable]
    functions_t: Mapping[str, StructuralTable]

    def domain(self, name: str) -> tuple[int, ...]:
        if name in self.variables:
            return tuple(self.variables[name])
        return tuple(self.exogenous[name].values)

    @property
    def manipulative(self) -> list[str]:
        return [v for v in self.variables if v != self.reward]

    def functions(self, t: int) -> Mapping[str, StructuralTable]:
        return self.functions_t0 if t == 0 else self.functions_t

    def slice_order(self, t: int) -> list[str]:
        """Topological order of endogenous variables within slice ``t``."""
        g = nx.DiGraph()
        g.add_nodes_from(self.variables)
        for name, fn in self.functions(t).items():
            for parent, lag in fn.parents:
                if lag == 0 and parent in self.variables:
                    g.add_edge(parent, name)
        # lexicographical tie-break keeps the order stable across runs
        order = {v: i for i, v in enumerate(self.variables)}
        return list(nx.lexicographical_topological_sort(g, key=order.__getitem__))


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # cycle | partial-table | domain | reference | exogenous | structure
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}

    def add(self, kind, message):
        self.issues.append(ValidationIssue(kind, message))


def validate_template(template: ScmTemplate) -> ValidationReport:
    """Check a template against the structural invariants.

    Never raises; every violation is collected in the returned report.
    """
    report = ValidationReport()
    endo = template.variables
    exo = template.exogenous

    for name, dom in endo.items():
        if len(dom) == 0:
            report.add("domain", f"variable {name} has an empty domain")
        elif len(set(dom)) != len(dom):
            report.add("domain", f"variable {name} has duplicate domain values")
    for name, spec in exo.items():
        if name in endo:
            report.add("reference", f"{name} is both endogenous and exogenous")
        if len(spec.values) == 0 or len(set(spec.values)) != len(spec.values):
            report.add("exogenous", f"exogenous {name} has an empty or duplicated domain")
        if len(spec.values) != len(spec.probs):
            report.add("exogenous", f"exogenous {name} has {len(spec.probs)} probabilities for {len(spec.values)} values")
        if any(p < 0.0 or p > 1.0 for p in spec.probs):
            report.add("exogenous", f"exogenous {name} has a probability outside [0, 1]")
        if abs(sum(spec.probs) - 1.0) > PMF_TOL:
            report.add("exogenous", f"exogenous {name} pmf sums to {sum(spec.probs)!r}")
    if template.reward not in endo:
        report.add("reference", f"reward variable {template.reward} is not endogenous")

    for regime, fns in (("functions_t0", template.functions_t0), ("functions_t", template.functions_t)):
        missing = [v for v in endo if v not in fns]
        extra = [v for v in fns if v not in endo]
        for v in missing:
            report.add("structure", f"{regime} has no mechanism for {v}")
        for v in extra:
            report.add("reference", f"{regime} defines a mechanism for unknown variable {v}")

        g = nx.DiGraph()
        g.add_nodes_from(endo)
        for name, fn in fns.items():
            if name not in endo:
                continue
            if fn.output != name:
                report.add("structure", f"{regime}[{name}] declares output {fn.output}")
            if len(set(fn.parents)) != len(fn.parents):
                report.add("structure", f"{regime}[{name}] lists a parent twice")
            parents_ok = True
            for parent, lag in fn.parents:
                if parent in endo:
                    if lag not in (0, 1):
                        report.add("structure", f"{regime}[{name}] uses lag {lag} on {parent}; only lag 0 or 1 is supported")
                        parents_ok = False
                    elif lag == 1 and regime == "functions_t0":
                        report.add("structure", f"functions_t0[{name}] reads lagged parent {parent}; slice 0 has no past")
                        parents_ok = False
                    elif lag == 0:
                        g.add_edge(parent, name)
                elif parent in exo:
                    if lag != 0:
                        report.add("exogenous", f"{regime}[{name}] reads exogenous {parent} with lag {lag}")
                        parents_ok = False
                else:
                    report.add("reference", f"{regime}[{name}] references unknown parent {parent}")
                    parents_ok = False
            if not parents_ok:
                continue
            domains = [template.domain(p) for p, _ in fn.parents]
            missing_rows = [c for c in itertools.product(*domains) if c not in fn.table]
            if missing_rows:
                report.add("partial-table", f"{regime}[{name}] has no row for parent values {missing_rows[0]} ({len(missing_rows)} missing)")
            allowed = set(itertools.product(*domains))
            bad_keys = [k for k in fn.table if k not in allowed]
            if bad_keys:
                report.add("domain", f"{regime}[{name}] has row {bad_keys[0]} outside the parent domains")
            out_dom = set(endo[name])
            bad_out = sorted({v for v in fn.table.values() if v not in out_dom})
            if bad_out:
                report.add("domain", f"{regime}[{name}] outputs {bad_out[0]} outside D({name})")
        try:
            cycle = nx.find_cycle(g)
        except nx.NetworkXNoCycle:
            pass
        else:
            path = " -> ".join([cycle[0][0]] + [e[1] for e in cycle])
            report.add("cycle", f"{regime} contains the intra-slice cycle {path}")
    return report


@dataclass(frozen=True)
class Intervention:
    """A (possibly empty) assignment ``do(V1=v1, ...)``."""

    assignments: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        items = tuple(sorted((str(k), int(v)) for k, v in self.assignments))
        names = [k for k, _ in items]
        if len(set(names)) != len(names):
            raise ValueError(f"intervention targets a variable twice: {names}")
        object.__setattr__(self, "assignments", items)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, int]) -> "Intervention":
        return cls(tuple(mapping.items()))

    def as_dict(self) -> dict[str, int]:
        return dict(self.assignments)

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.assignments)

    def __len__(self):
        return len(self.assignments)

    def merge(self, other: "Intervention") -> "Intervention":
        merged = self.as_dict()
        merged.update(other.as_dict())
        return Intervention.from_mapping(merged)

    def __str__(self):
        if not self.assignments:
            return "do()"
        return "do(" + ", ".join(f"{k}={v}" for k, v in self.assignments) + ")"


def do(**assignments: int) -> Intervention:
    return Intervention.from_mapping(assignments)


NO_INTERVENTION = Intervention()


def check_intervention(template: ScmTemplate, intervention: Intervention) -> None:
    for name, value in intervention.assignments:
        if name not in template.variables:
            raise ValueError(f"cannot intervene on unknown variable {name}")
        if name == template.reward:
            raise ValueError(f"the reward variable {name} cannot be intervened on")
        if value not in template.variables[name]:
            raise ValueError(f"do({name}={value}) is outside D({name})={list(template.variables[name])}")


@dataclass(frozen=True)
class UnrolledScm:
    template: ScmTemplate
    slices: int
    interventions: tuple[Intervention, ...]

    def intervention_at(self, t: int) -> Intervention:
        return self.interventions[t]

    @property
    def is_observational(self) -> bool:
        return all(len(i) == 0 for i in self.interventions)

    def mechanism(self, name: str, t: int) -> StructuralTable:
        """Mechanism of ``name`` at slice ``t`` after mutilation."""
        fixed = self.interventions[t].as_dict()
        if name in fixed:
            return StructuralTable.constant(name, fixed[name])
        return self.template.functions(t)[name]

    def graph(self) -> nx.DiGraph:
        """Unrolled causal graph over ``(name, slice)`` nodes, exogenous included."""
        g = nx.DiGraph()
        for t in range(self.slices):
            for name in self.template.variables:
                g.add_node((name, t), kind="endogenous")
            for name in self.template.exogenous:
                g.add_node((name, t), kind="exogenous")
            for name in self.template.variables:
                for parent, lag in self.mechanism(name, t).parents:
                    g.add_edge((parent, t - lag), (name, t), lag=lag)
        return g

    def order(self) -> list[Node]:
        return [(name, t) for t in range(self.slices) for name in self.template.slice_order(t)]


def unroll(template: ScmTemplate, slices: int) -> UnrolledScm:
    if slices < 1:
        raise ValueError(f"need at least one slice, got {slices}")
    report = validate_template(template)
    if not report.ok:
        raise TemplateError(report.issues)
    return UnrolledScm(template, slices, tuple(NO_INTERVENTION for _ in range(slices)))


def mutilate(scm: UnrolledScm, t: int, intervention: Intervention) -> UnrolledScm:
    """Apply ``do(intervention)`` at slice ``t``; previous assignments at ``t`` are kept unless overridden."""
    if not 0 <= t < scm.slices:
        raise IndexError(f"slice {t} outside horizon of {scm.slices} slices")
    check_intervention(scm.template, intervention)
    per_slice = list(scm.interventions)
    per_slice[t] = per_slice[t].merge(intervention)
    return UnrolledScm(scm.template, scm.slices, tuple(per_slice))


def intervene(template: ScmTemplate, per_slice: Iterable[Intervention]) -> UnrolledScm:
    """Unroll over ``len(per_slice)`` slices and apply one intervention per slice."""
    per_slice = list(per_slice)
    scm = unroll(template, len(per_slice))
    for t, intervention in enumerate(per_slice):
        if len(intervention):
            scm = mutilate(scm, t, intervention)
    return scm


def evaluate(scm: UnrolledScm, exogenous: Mapping[Node, int]) -> dict[Node, int]:
    """Deterministically compute every endogenous value from a full exogenous draw."""
    values: dict[Node, int] = dict(exogenous)
    for name, t in scm.order():
        fn = scm.mechanism(name, t)
        key = tuple(values[(p, t - lag)] for p, lag in fn.parents)
        values[(name, t)] = fn(key)
    return {node: values[node] for node in scm.order()}


def sample_trajectory(scm: UnrolledScm, rng: np.random.Generator) -> dict[Node, int]:
    """Draw one trajectory; returns exogenous and endogenous values keyed by ``(name, slice)``."""
    exo = {}
    for t in range(scm.slices):
        for name, spec in scm.template.exogenous.items():
            exo[(name, t)] = int(spec.values[_draw_index(spec.probs, rng.random())])
    out = dict(exo)
    out.update(evaluate(scm, exo))
    return out


def _draw_index(probs, u):
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def draw_indices(probs, size: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of ``size`` category indices."""
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, len(probs) - 1)


def compile_table(template: ScmTemplate, fn: StructuralTable) -> np.ndarray:
    """Dense index form of a mechanism: parent value indices -> output value index."""
    domains = [template.domain(p) for p, _ in fn.parents]
    out_dom = template.variables[fn.output]
    arr = np.empty([len(d) for d in domains], dtype=np.intp)
    for combo in itertools.product(*(range(len(d)) for d in domains)):
        key = tuple(d[i] for d, i in zip(domains, combo))
        arr[combo] = out_dom.index(fn.table[key])
    return arr


def sample_batch(scm: UnrolledScm, n: int, rng: np.random.Generator) -> dict[Node, np.ndarray]:
    """Draw ``n`` independent trajectories; returns endogenous value arrays keyed by node."""
    template = scm.template
    idx: dict[Node, np.ndarray] = {}
    compiled: dict[int, np.ndarray] = {}
    for t in range(scm.slices):
        for name, spec in template.exogenous.items():
            idx[(name, t)] = draw_indices(spec.probs, n, rng)
        for name in template.slice_order(t):
            fn = scm.mechanism(name, t)
            if fn.is_constant:
                value = template.variables[name].index(fn.table[()])
                idx[(name, t)] = np.full(n, value, dtype=np.intp)
                continue
            key = id(fn)
            if key not in compiled:
                compiled[key] = compile_table(template, fn)
            parents = tuple(idx[(p, t - lag)] for p, lag in fn.parents)
            idx[(name, t)] = compiled[key][parents]
    return {
        (name, t): np.asarray(template.variables[name])[idx[(name, t)]]
        for t in range(scm.slices)
        for name in template.variables
    }
