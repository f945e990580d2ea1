"""CSV artifacts for runs: traces, per-trial summaries and aggregated regret curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ChronologicalRun, OscillationRow
from .policies import PlayTrace

TRACE_HEADER = ["round", "arm_id", "reward", "inst_regret", "cum_regret", "optimal_flag"]
SUMMARY_HEADER = ["mode", "replicate", "trial", "implemented_arm", "implemented", "final_regret", "decomposed_regret"]
TABLE_HEADER = ["mode", "replicate", "trial", "arm_id", "arm", "true_mean", "agent_mean", "bias", "pulls"]
CURVE_HEADER = ["mode", "trial", "round", "mean_cum_regret", "sd_cum_regret", "optimal_arm_prob"]
STATS_HEADER = [
    "mode", "trial", "replicates", "mean_final_regret", "sd_final_regret",
    "se_final_regret", "optimal_arm_prob_final", "max_gap",
]


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_trace_csv(trace: PlayTrace, path) -> None:
    inst, cum, opt = trace.inst_regret, trace.cum_regret, trace.optimal
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(TRACE_HEADER)
        for k in range(len(trace)):
            w.writerow([k + 1, int(trace.arms[k]), int(trace.rewards[k]), float(inst[k]), float(cum[k]), int(opt[k])])


def read_trace_csv(path, means) -> PlayTrace:
    """Rebuild a trace; ``means`` are the reward-table means it was scored against."""
    arms, rewards = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            arms.append(int(row["arm_id"]))
            rewards.append(int(row["reward"]))
    return PlayTrace(np.array(arms, dtype=np.int64), np.array(rewards, dtype=np.int8), np.asarray(means, dtype=float))


def summary_rows(run: ChronologicalRun, replicate: int):
    arms = None
    for t in run.trials:
        arms = t.reward_table.arms
        yield [run.mode, replicate, t.index, t.implemented, str(arms[t.implemented]), t.final_regret, t.decomposed_regret()]


def table_rows(run: ChronologicalRun, replicate: int):
    for t in run.trials:
        for a in t.reward_table.arms:
            true, agent = float(t.reward_table.means[a.id]), float(t.agent_table.means[a.id])
            yield [run.mode, replicate, t.index, a.id, str(a), true, agent, agent - true, int(t.counts[a.id])]


def write_oscillation_csv(rows: list[OscillationRow], arms, path_or_file) -> None:
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = _writer(fh)
        w.writerow(["trial", "arm_id", "arm", "mean", "argmax_flag", "implemented_flag"])
        for r in rows:
            for a in arms:
                w.writerow([r.trial, a.id, str(a), r.means[a.id], int(a.id == r.argmax), int(a.id == r.implemented)])
    finally:
        if own:
            fh.close()


@dataclass
class _Curve:
    count: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    optimal: np.ndarray | None = None
    finals: list[float] = field(default_factory=list)
    max_gaps: list[float] = field(default_factory=list)

    def add(self, cum: np.ndarray, optimal: np.ndarray, max_gap: float):
        if self.mean is None:
            self.mean = np.zeros(len(cum))
            self.m2 = np.zeros(len(cum))
            self.optimal = np.zeros(len(cum), dtype=np.int64)
        self.count += 1
        # Welford update, vectorized over rounds
        delta = cum - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (cum - self.mean)
        self.optimal += optimal
        self.finals.append(float(cum[-1]))
        self.max_gaps.append(max_gap)

    def sd(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.m2 / (self.count - 1))


class RegretCurves:
    """Streaming mean and sd of cumulative regret and optimal-arm share per (mode, trial)."""

    def __init__(self):
        self.curves: dict[tuple[str, int], _Curve] = {}

    def add(self, run: ChronologicalRun) -> None:
        for t in run.trials:
            curve = self.curves.setdefault((run.mode, t.index), _Curve())
            curve.add(t.trace.cum_regret, t.trace.optimal, t.reward_table.max_gap())

    def curve(self, mode: str, trial: int) -> _Curve:
        return self.curves[(mode, trial)]

    def stats(self, mode: str, trial: int) -> dict:
        c = self.curves[(mode, trial)]
        finals = np.array(c.finals)
        sd = float(finals.std(ddof=1)) if len(finals) > 1 else 0.0
        return {
            "mode": mode,
            "trial": trial,
            "replicates": c.count,
            "mean_final_regret": float(finals.mean()),
            "sd_final_regret": sd,
            "se_final_regret": sd / math.sqrt(len(finals)),
            "optimal_arm_prob_final": float(c.optimal[-1] / c.count),
            "max_gap": float(np.mean(c.max_gaps)),
        }

    def write(self, out: Path) -> None:
        with open(out / "curves.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(CURVE_HEADER)
            for (mode, trial), c in self.curves.items():
                sd = c.sd()
                prob = c.optimal / c.count
                for k in range(len(c.mean)):
                    w.writerow([mode, trial, k + 1, float(c.mean[k]), float(sd[k]), float(prob[k])])
        with open(out / "trial_stats.csv", "w", newline="") as fh:
            w = _writer(fh)
            w.writerow(STATS_HEADER)
            for mode, trial in self.curves:
                s = self.stats(mode, trial)
                w.writerow([s[h] for h in STATS_HEADER])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
