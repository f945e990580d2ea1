"""Interventional rewards: exact, Monte Carlo and from a fitted simulator.

Exact means use forward propagation of the joint distribution of one slice's
endogenous variables. Exogenous noise is independent across slices and every
mechanism reads at most one slice back, so that joint is a sufficient state
and the result equals the full sum over exogenous assignments.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .scm import (
    NO_INTERVENTION,
    Intervention,
    ScmTemplate,
    UnrolledScm,
    check_intervention,
    intervene,
    sample_batch,
)

if TYPE_CHECKING:
    from .arms import ArmTable

WINDOWS = ("lag1", "full")
TIE_TOL = 1e-12


def argmax_lowest(values, tol: float = TIE_TOL) -> int:
    """Index of the maximum; values within ``tol`` of it count as ties, lowest index wins."""
    values = np.asarray(values, dtype=float)
    best = values.max()
    return int(np.flatnonzero(values >= best - tol)[0])


def window_interventions(
    history: Sequence[Intervention], arm: Intervention, window: str = "lag1"
) -> list[Intervention]:
    """Per-slice interventions seen by the trial at slice ``len(history)``.

    ``full`` replays every implemented intervention. ``lag1`` keeps only the
    one implemented at the previous slice; earlier slices evolve unperturbed
    and are marginalized like any other unobserved past.
    """
    t = len(history)
    if window == "full":
        return list(history) + [arm]
    if window == "lag1":
        per_slice = [NO_INTERVENTION] * t
        if t:
            per_slice[t - 1] = history[t - 1]
        return per_slice + [arm]
    raise ValueError(f"unknown window {window!r}; expected one of {WINDOWS}")


def _windowed_scm(template, arm, history, window) -> UnrolledScm:
    for past in history:
        check_intervention(template, past)
    check_intervention(template, arm)
    return intervene(template, window_interventions(history, arm, window))


def slice_distribution(scm: UnrolledScm, t: int | None = None) -> dict[tuple[int, ...], float]:
    """Exact joint pmf of the endogenous values at slice ``t`` (default: last slice).

    Keys are value tuples ordered like ``scm.template.variables``.
    """
    template = scm.template
    t = scm.slices - 1 if t is None else t
    names = list(template.variables)
    pos = {n: i for i, n in enumerate(names)}
    exo = list(template.exogenous.values())
    exo_joint = []
    for combo in itertools.product(*(zip(s.values, s.probs) for s in exo)):
        p = math.prod(pr for _, pr in combo)
        if p > 0.0:
            exo_joint.append(({s.name: v for s, (v, _) in zip(exo, combo)}, p))

    state: dict[tuple[int, ...], float] = {(): 1.0}
    for s in range(t + 1):
        order = template.slice_order(s)
        mechs = [(name, scm.mechanism(name, s)) for name in order]
        nxt: dict[tuple[int, ...], float] = {}
        for prev, p_prev in state.items():
            for u, p_u in exo_joint:
                cur: dict[str, int] = {}
                for name, fn in mechs:
                    key = tuple(
                        u[p] if p in u else (cur[p] if lag == 0 else prev[pos[p]])
                        for p, lag in fn.parents
                    )
                    cur[name] = fn.table[key]
                row = tuple(cur[n] for n in names)
                nxt[row] = nxt.get(row, 0.0) + p_prev * p_u
        state = nxt
    return state


def exact_interventional_mean(
    template: ScmTemplate,
    arm: Intervention,
    history: Sequence[Intervention] = (),
    window: str = "lag1",
) -> float:
    """E[Y_t | do(arm) at t, implemented history] with ``t = len(history)``."""
    scm = _windowed_scm(template, arm, history, window)
    y = list(template.variables).index(template.reward)
    return float(sum(p * row[y] for row, p in slice_distribution(scm).items()))


@dataclass(frozen=True)
class RewardTable:
    arms: "ArmTable"
    means: np.ndarray
    history: tuple[Intervention, ...] = ()
    window: str = "lag1"

    @property
    def best(self) -> int | None:
        return argmax_lowest(self.means) if len(self.means) else None

    @property
    def optimum(self) -> float:
        return float(self.means.max())

    @property
    def gaps(self) -> np.ndarray:
        return self.optimum - self.means

    def max_gap(self) -> float:
        return float(self.gaps.max()) if len(self.means) else 0.0

    def __getitem__(self, arm_id: int) -> float:
        return float(self.means[arm_id])


def exact_reward_table(
    template: ScmTemplate,
    arm_table: "ArmTable",
    history: Sequence[Intervention] = (),
    window: str = "lag1",
) -> RewardTable:
    means = np.array(
        [exact_interventional_mean(template, a.intervention, history, window) for a in arm_table],
        dtype=float,
    )
    return RewardTable(arm_table, means, tuple(history), window)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    se: float
    n: int


def monte_carlo_mean(
    template: ScmTemplate,
    arm: Intervention,
    history: Sequence[Intervention] = (),
    window: str = "lag1",
    n: int = 100_000,
    rng: np.random.Generator | None = None,
) -> MonteCarloEstimate:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    scm = _windowed_scm(template, arm, history, window)
    y = sample_batch(scm, n, rng)[(template.reward, scm.slices - 1)]
    mean = float(y.mean())
    # Bernoulli plug-in standard error
    se = math.sqrt(max(mean * (1.0 - mean), 0.0) / n)
    return MonteCarloEstimate(mean, se, n)


@dataclass(frozen=True)
class ObservationalDataset:
    """``values[sample, slice, k]`` is the value of ``variables[k]``."""

    variables: tuple[str, ...]
    values: np.ndarray

    @property
    def sample_count(self) -> int:
        return self.values.shape[0]

    @property
    def slice_count(self) -> int:
        return self.values.shape[1]

    def column(self, name: str, t: int) -> np.ndarray:
        return self.values[:, t, self.variables.index(name)]


def generate_observational(scm: UnrolledScm, n: int, rng: np.random.Generator) -> ObservationalDataset:
    if n < 1:
        raise ValueError("observational dataset needs at least one sample")
    if not scm.is_observational:
        raise ValueError("observational data must come from an unintervened SCM")
    batch = sample_batch(scm, n, rng)
    names = tuple(scm.template.variables)
    values = np.stack(
        [np.stack([batch[(v, t)] for v in names], axis=-1) for t in range(scm.slices)], axis=1
    )
    return ObservationalDataset(names, values.astype(np.int64))


def write_dataset_csv(data: ObservationalDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "slice", "variable", "value"])
        for i in range(data.sample_count):
            for t in range(data.slice_count):
                for k, v in enumerate(data.variables):
                    w.writerow([i, t, v, int(data.values[i, t, k])])


def read_dataset_csv(path) -> ObservationalDataset:
    rows = []
    variables: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["sample", "slice", "variable", "value"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            if r["variable"] not in variables:
                variables.append(r["variable"])
            rows.append((int(r["sample"]), int(r["slice"]), r["variable"], int(r["value"])))
    n = max(r[0] for r in rows) + 1
    s = max(r[1] for r in rows) + 1
    values = np.zeros((n, s, len(variables)), dtype=np.int64)
    seen = np.zeros(values.shape, dtype=bool)
    for i, t, v, x in rows:
        values[i, t, variables.index(v)] = x
        seen[i, t, variables.index(v)] = True
    if not seen.all():
        raise ValueError(f"{path}: incomplete dataset, first gap at {tuple(np.argwhere(~seen)[0])}")
    return ObservationalDataset(tuple(variables), values)


@dataclass(frozen=True)
class FittedMechanism:
    """Conditional pmf ``probs[parent value indices..., own value index]``."""

    output: str
    parents: tuple[tuple[str, int], ...]
    probs: np.ndarray
    counts: np.ndarray
    unseen_rows: int


@dataclass(frozen=True)
class EstimatedSem:
    template: ScmTemplate
    t0: Mapping[str, FittedMechanism]
    t: Mapping[str, FittedMechanism]
    smoothing: float
    sample_count: int
    exogenous: Mapping[str, dict[int, float]] = field(default_factory=dict)

    def mechanism(self, name: str, t: int) -> FittedMechanism:
        return (self.t0 if t == 0 else self.t)[name]


def _fit_one(template, name, parents, rows_parent, rows_own, smoothing) -> FittedMechanism:
    dom = template.variables[name]
    shape = [len(template.variables[p]) for p, _ in parents] + [len(dom)]
    counts = np.zeros(shape, dtype=np.int64)
    idx = tuple(
        _value_index(template.variables[p], col) for (p, _), col in zip(parents, rows_parent)
    ) + (_value_index(dom, rows_own),)
    np.add.at(counts, idx, 1)
    smoothed = counts + smoothing
    totals = smoothed.sum(axis=-1, keepdims=True)
    unseen = int((counts.sum(axis=-1) == 0).sum())
    probs = np.where(totals > 0, smoothed / np.where(totals > 0, totals, 1), 1.0 / len(dom))
    return FittedMechanism(name, tuple(parents), probs, counts, unseen)


def _value_index(domain, values: np.ndarray) -> np.ndarray:
    lookup = {v: i for i, v in enumerate(domain)}
    out = np.empty(len(values), dtype=np.intp)
    for v, i in lookup.items():
        out[values == v] = i
    bad = ~np.isin(values, list(domain))
    if bad.any():
        raise ValueError(f"value {values[bad][0]} outside domain {list(domain)}")
    return out


def conditioning_sets(template: ScmTemplate, t: int = 0) -> dict[str, list[tuple[str, int]]]:
    """Observed conditioning set of every endogenous variable in slice ``t``.

    Variables that share latent noise form confounded components. Following
    the c-component factorization, a variable conditions on the earlier members
    of its component (in slice order) and on the endogenous parents of all of
    them. An unconfounded variable conditions on its own parents only. With
    these sets, pinning a variable and sampling the rest reproduces
    P(y | do(v)) whenever that effect is identified by the factorization.
    """
    fns = template.functions(t)
    order = template.slice_order(t)
    latents = {name: {p for p, _ in fns[name].parents if p in template.exogenous} for name in order}
    out = {}
    for i, name in enumerate(order):
        prefix = order[: i + 1]
        # component of ``name`` among the prefix, via shared latents
        comp, frontier = {name}, [name]
        while frontier:
            v = frontier.pop()
            for w in prefix:
                if w not in comp and latents[v] & latents[w]:
                    comp.add(w)
                    frontier.append(w)
        refs: list[tuple[str, int]] = []
        for v in [w for w in prefix if w in comp]:
            cands = [(p, lag) for p, lag in fns[v].parents if p in template.variables]
            if v != name:
                cands.append((v, 0))
            for r in cands:
                if r != (name, 0) and r not in refs:
                    refs.append(r)
        own = [r for r in refs if r in fns[name].parents]
        out[name] = own + [r for r in refs if r not in own]
    return out


def fit_structural_pmfs(
    data: ObservationalDataset, template: ScmTemplate, smoothing: float = 1.0
) -> EstimatedSem:
    """Fit one conditional pmf per endogenous variable by smoothed frequency counts.

    Each variable is conditioned on its :func:`conditioning_sets` entry, which
    reduces to its endogenous parents when it shares no latent noise. Slice 0
    fits the initial mechanisms; slices 1.. are pooled for the time-invariant
    later mechanisms.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    if set(data.variables) != set(template.variables):
        raise ValueError(f"dataset variables {data.variables} do not match template {tuple(template.variables)}")
    if data.slice_count < 2:
        raise ValueError("lagged mechanisms need a dataset covering at least two slices")

    t0 = {}
    for name, parents in conditioning_sets(template, 0).items():
        cols = [data.column(p, 0) for p, _ in parents]
        t0[name] = _fit_one(template, name, parents, cols, data.column(name, 0), smoothing)
    tt = {}
    for name, parents in conditioning_sets(template, 1).items():
        cols = [
            np.concatenate([data.column(p, s - lag) for s in range(1, data.slice_count)])
            for p, lag in parents
        ]
        own = np.concatenate([data.column(name, s) for s in range(1, data.slice_count)])
        tt[name] = _fit_one(template, name, parents, cols, own, smoothing)

    # U is identifiable when a slice-0 mechanism is an injective copy of it
    exogenous = {}
    for name, fn in template.functions_t0.items():
        if len(fn.parents) == 1 and fn.parents[0][0] in template.exogenous:
            u = fn.parents[0][0]
            outputs = [fn.table[(v,)] for v in template.exogenous[u].values]
            if len(set(outputs)) == len(outputs):
                probs = t0[name].probs
                dom = template.variables[name]
                exogenous[u] = {v: float(probs[dom.index(o)]) for v, o in zip(template.exogenous[u].values, outputs)}
    return EstimatedSem(template, t0, tt, float(smoothing), data.sample_count, exogenous)


def write_estimated_sem(fhat: EstimatedSem, path) -> None:
    """Human-readable dump of every fitted conditional table."""
    lines = [f"# fitted from {fhat.sample_count} samples, additive smoothing {fhat.smoothing:g}"]
    for regime, mechs in (("t=0", fhat.t0), ("t>0", fhat.t)):
        lines.append(f"[{regime}]")
        for name, m in mechs.items():
            given = ", ".join(f"{p}[t-1]" if lag else p for p, lag in m.parents)
            lines.append(f"P({name} | {given})  unseen_rows={m.unseen_rows}")
            dom = fhat.template.variables[name]
            for combo in itertools.product(*(range(len(fhat.template.variables[p])) for p, _ in m.parents)):
                vals = tuple(fhat.template.variables[p][i] for (p, _), i in zip(m.parents, combo))
                row = "  ".join(f"{v}:{m.probs[combo + (k,)]:.6f}" for k, v in enumerate(dom))
                lines.append(f"  {vals}  {row}")
    if fhat.exogenous:
        lines.append("[exogenous]")
        for u, pmf in fhat.exogenous.items():
            lines.append(f"P({u})  " + "  ".join(f"{v}:{p:.6f}" for v, p in pmf.items()))
    Path(path).write_text("\n".join(lines) + "\n")


def simulate_from_fitted(
    fhat: EstimatedSem,
    arm: Intervention,
    history: Sequence[Intervention] = (),
    window: str = "lag1",
    n: int = 100_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Ancestral sampling through the fitted pmfs with intervened variables pinned."""
    template = fhat.template
    rng = np.random.default_rng() if rng is None else rng
    per_slice = window_interventions(history, arm, window)
    for i in per_slice:
        check_intervention(template, i)
    idx: dict[tuple[str, int], np.ndarray] = {}
    for t, intervention in enumerate(per_slice):
        fixed = intervention.as_dict()
        for name in template.slice_order(t):
            dom = template.variables[name]
            if name in fixed:
                idx[(name, t)] = np.full(n, dom.index(fixed[name]), dtype=np.intp)
                continue
            m = fhat.mechanism(name, t)
            missing = [p for p, lag in m.parents if (p, t - lag) not in idx]
            if missing:
                raise ValueError(f"fitted model for {name} at slice {t} needs {missing}")
            rows = m.probs[tuple(idx[(p, t - lag)] for p, lag in m.parents)]
            rows = np.broadcast_to(rows, (n, len(dom)))
            cdf = np.cumsum(rows, axis=1)
            draw = (rng.random(n)[:, None] >= cdf).sum(axis=1)
            idx[(name, t)] = np.minimum(draw, len(dom) - 1)
    y = np.asarray(template.variables[template.reward])[idx[(template.reward, len(per_slice) - 1)]]
    return float(y.mean())


def confounded_variables(template: ScmTemplate, t: int = 0) -> set[str]:
    """Endogenous variables sharing an exogenous parent with another one (a bidirected edge)."""
    users: dict[str, set[str]] = {}
    for name, fn in template.functions(t).items():
        for p, _ in fn.parents:
            if p in template.exogenous:
                users.setdefault(p, set()).add(name)
    out: set[str] = set()
    for names in users.values():
        if len(names) > 1:
            out |= names
    return out


@dataclass(frozen=True)
class BiasRow:
    arm_id: int
    arm: str
    fitted: float
    exact: float
    confounded: bool

    @property
    def bias(self) -> float:
        return self.fitted - self.exact


def transfer_bias_report(
    fhat: EstimatedSem,
    arm_table: "ArmTable",
    history: Sequence[Intervention] = (),
    window: str = "lag1",
    n: int = 100_000,
    rng: np.random.Generator | None = None,
) -> list[BiasRow]:
    """Compare simulator estimates with exact means, flagging arms on confounded variables.

    Truncated factorization over observational conditionals is biased when the
    intervened variable shares latent noise with the reward; this report keeps
    that bias visible instead of silently feeding it to the bandit.
    """
    rng = np.random.default_rng() if rng is None else rng
    conf = confounded_variables(fhat.template, len(history))
    rows = []
    for a in arm_table:
        est = simulate_from_fitted(fhat, a.intervention, history, window, n, rng)
        exact = exact_interventional_mean(fhat.template, a.intervention, history, window)
        rows.append(BiasRow(a.id, str(a.intervention), est, exact, bool(set(a.intervention.targets) & conf)))
    return rows
