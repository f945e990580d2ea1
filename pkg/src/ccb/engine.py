"""Chronological causal bandits: trial sequencing, implemented interventions, baseline."""

from __future__ import annotations

import os
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .arms import ArmTable
from .inference import (
    EstimatedSem,
    RewardTable,
    exact_reward_table,
    fit_structural_pmfs,
    generate_observational,
    simulate_from_fitted,
    window_interventions,
)
from .policies import PlayTrace, make_policy, play_trial
from .scm import Intervention, ScmTemplate, intervene, sample_batch, unroll

RUN_MODES = ("ccb", "scm-mab")
ESTIMATION_MODES = ("oracle", "observational")
REWARD_SAMPLING = ("table", "scm")


@dataclass(frozen=True)
class RunConfig:
    template: ScmTemplate
    arms: ArmTable
    trials: int = 5
    horizon: int | tuple[int, ...] = 10_000
    policy: str = "ts"
    tolerance: float = 1e-6
    window: str = "lag1"
    estimation: str = "oracle"
    n_obs: int = 100_000
    smoothing: float = 1.0
    n_sim: int = 100_000
    reward_sampling: str = "table"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if self.estimation not in ESTIMATION_MODES:
            raise ValueError(f"unknown estimation mode {self.estimation!r}")
        if self.reward_sampling not in REWARD_SAMPLING:
            raise ValueError(f"unknown reward sampling {self.reward_sampling!r}")
        if any(h < 1 for h in self.horizons()):
            raise ValueError("horizons must be positive")
        if self.reward_sampling == "scm" and self.estimation != "oracle":
            raise ValueError("SCM reward sampling draws from the true model; use it with oracle estimation")
        if self.window not in ("lag1", "full"):
            raise ValueError(f"unknown window {self.window!r}")

    def horizons(self) -> list[int]:
        if isinstance(self.horizon, int):
            return [self.horizon] * self.trials
        if len(self.horizon) != self.trials:
            raise ValueError(f"{len(self.horizon)} horizons given for {self.trials} trials")
        return list(self.horizon)

    def snapshot(self) -> dict:
        return {
            "trials": self.trials,
            "horizon": self.horizon if isinstance(self.horizon, int) else list(self.horizon),
            "policy": self.policy,
            "tolerance": self.tolerance,
            "window": self.window,
            "estimation": self.estimation,
            "n_obs": self.n_obs,
            "smoothing": self.smoothing,
            "n_sim": self.n_sim,
            "reward_sampling": self.reward_sampling,
            "arm_mode": self.arms.mode,
        }


@dataclass(frozen=True)
class TrialResult:
    index: int
    reward_table: RewardTable  # true conditional means, used for regret
    agent_table: RewardTable  # means the bandit actually played against
    trace: PlayTrace
    implemented: int
    counts: np.ndarray

    @property
    def final_regret(self) -> float:
        return self.trace.final_regret

    def decomposed_regret(self) -> float:
        """Sum over arms of gap times pull count, evaluated exactly and then rounded once."""
        return float(sum(Fraction(float(g)) * int(c) for g, c in zip(self.reward_table.gaps, self.counts)))


@dataclass
class ChronologicalRun:
    mode: str
    trials: list[TrialResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: tuple = ()

    @property
    def implemented(self) -> list[Intervention]:
        return [t.reward_table.arms[t.implemented].intervention for t in self.trials]


def select_implemented_intervention(counts) -> int:
    """Most-played arm; lowest id wins ties."""
    counts = np.asarray(counts)
    if len(counts) == 0:
        raise ValueError("no arms were played")
    return int(np.argmax(counts))


def _seed(base: np.random.SeedSequence, *keys: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + tuple(keys))
    )


def replicate_seed(master_seed: int, replicate: int) -> np.random.SeedSequence:
    """Counter-based stream for one replicate; independent of the replicate count."""
    return np.random.SeedSequence(master_seed, spawn_key=(replicate,))


def _as_seedseq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def fit_agent_model(config: RunConfig, seed) -> EstimatedSem:
    """F-hat for one run, fitted on its own observational sample."""
    ss = _as_seedseq(seed)
    scm = unroll(config.template, max(config.trials, 2))
    data = generate_observational(scm, config.n_obs, _seed(ss, 1))
    return fit_structural_pmfs(data, config.template, config.smoothing)


def conditional_reward_env(
    model: ScmTemplate | EstimatedSem,
    arm_table: ArmTable,
    history: Sequence[Intervention] = (),
    window: str = "lag1",
    n: int = 100_000,
    rng: np.random.Generator | None = None,
) -> RewardTable:
    """Reward table for the trial after ``history``, under the true SEM or a fitted one."""
    if isinstance(model, ScmTemplate):
        return exact_reward_table(model, arm_table, history, window)
    rng = np.random.default_rng() if rng is None else rng
    means = np.array(
        [simulate_from_fitted(model, a.intervention, history, window, n, rng) for a in arm_table]
    )
    return RewardTable(arm_table, means, tuple(history), window)


class ScmRewardSampler:
    """Draws each reward by simulating the true mutilated SCM instead of a Bernoulli coin."""

    def __init__(self, template: ScmTemplate, arm_table: ArmTable, history, window, batch: int = 4096):
        self.template = template
        self.scms = [
            intervene(template, window_interventions(history, a.intervention, window)) for a in arm_table
        ]
        self.batch = batch
        self.buffers: list[list[int]] = [[] for _ in arm_table]

    def __call__(self, arm: int, rng: np.random.Generator) -> int:
        buf = self.buffers[arm]
        if not buf:
            scm = self.scms[arm]
            y = sample_batch(scm, self.batch, rng)[(self.template.reward, scm.slices - 1)]
            buf.extend(reversed(y.tolist()))
        return buf.pop()


def _run(config: RunConfig, seed, mode: str) -> ChronologicalRun:
    if mode not in RUN_MODES:
        raise ValueError(f"unknown run mode {mode!r}")
    ss = _as_seedseq(seed)
    template, arms = config.template, config.arms
    fhat = fit_agent_model(config, ss) if config.estimation == "observational" else None

    def agent_table(history, trial):
        if fhat is None:
            return exact_reward_table(template, arms, history, config.window)
        return conditional_reward_env(fhat, arms, history, config.window, config.n_sim, _seed(ss, 2, trial))

    run = ChronologicalRun(mode, config=config.snapshot(), seed=(ss.entropy, *ss.spawn_key))
    history: list[Intervention] = []
    baseline_table = agent_table([], 0) if mode == "scm-mab" else None
    for i, horizon in enumerate(config.horizons()):
        true_table = exact_reward_table(template, arms, history, config.window)
        played = baseline_table if mode == "scm-mab" else agent_table(history, i)
        policy = make_policy(config.policy, len(arms), tolerance=config.tolerance, means=played.means)
        sampler = None
        if config.reward_sampling == "scm":
            sampler = ScmRewardSampler(template, arms, played.history, config.window)
        trace, _ = play_trial(played.means, policy, horizon, _seed(ss, 0, i), true_table.means, sampler)
        counts = trace.counts
        chosen = select_implemented_intervention(counts)
        run.trials.append(TrialResult(i, true_table, played, trace, chosen, counts))
        history.append(arms[chosen].intervention)
    return run


def run_ccb(config: RunConfig, seed=0) -> ChronologicalRun:
    """Play the trials in order, each conditioned on the interventions implemented before it."""
    return _run(config, seed, "ccb")


def run_scm_mab_baseline(config: RunConfig, seed=0) -> ChronologicalRun:
    """Memoryless baseline: the agent keeps playing the trial-0 reward model.

    The true environment still moves with the baseline's own implemented
    interventions, and regret is scored against it.
    """
    return _run(config, seed, "scm-mab")


def oracle_sequence(
    template: ScmTemplate, arm_table: ArmTable, trials: int, window: str = "lag1"
) -> list[RewardTable]:
    """Exact chronological recursion: implement the argmax of every trial's table."""
    history: list[Intervention] = []
    tables = []
    for _ in range(trials):
        table = exact_reward_table(template, arm_table, history, window)
        tables.append(table)
        history.append(arm_table[table.best].intervention)
    return tables


@dataclass(frozen=True)
class OscillationRow:
    trial: int
    means: tuple[float, ...]
    argmax: int
    implemented: int


def oscillation_report(run: ChronologicalRun) -> list[OscillationRow]:
    """Per-trial true reward tables with their argmax and the implemented arm."""
    return [
        OscillationRow(t.index, tuple(float(m) for m in t.reward_table.means), t.reward_table.best, t.implemented)
        for t in run.trials
    ]


def _job(args):
    config, master_seed, replicate, mode = args
    ss = replicate_seed(master_seed, replicate)
    return replicate, mode, _run(config, ss, mode)


def run_replicates(
    config: RunConfig,
    master_seed: int,
    replicates: int,
    modes: Sequence[str] = ("ccb", "scm-mab"),
    jobs: int | None = None,
) -> Iterator[tuple[int, str, ChronologicalRun]]:
    """Yield ``(replicate, mode, run)`` in replicate-major order.

    Both modes of a replicate share its seed stream, so their trial-0 traces
    coincide. Output order does not depend on ``jobs``.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    tasks = [(config, master_seed, r, m) for r in range(replicates) for m in modes]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if jobs <= 1:
        for task in tasks:
            yield _job(task)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
