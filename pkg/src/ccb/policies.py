"""Bernoulli bandit policies, the per-trial play loop and pseudo-regret."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


def bernoulli_kl(p: float, q: float) -> float:
    """KL divergence d(p, q) between Bernoulli(p) and Bernoulli(q), with 0 ln 0 = 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError(f"probabilities out of range: p={p}, q={q}")
    if q == 0.0:
        return 0.0 if p == 0.0 else math.inf
    if q == 1.0:
        return 0.0 if p == 1.0 else math.inf
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def _kl_inner(p: float, q: float) -> float:
    # unchecked d(p, q) for 0 < q < 1, used inside the bisection loop
    out = p * math.log(p / q) if p > 0.0 else 0.0
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def klucb_threshold(n: int) -> float:
    """Exploration level f(n) = ln n + 3 ln(max(ln n, 1))."""
    log_n = math.log(n)
    return log_n + 3.0 * math.log(max(log_n, 1.0))


def klucb_index(count: int, mean: float, n: int, tolerance: float = 1e-6) -> float:
    """Largest q in [mean, 1] with count * d(mean, q) <= f(n), found by bisection."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if count < 0 or n < 1:
        raise ValueError("need count >= 0 and n >= 1")
    if count == 0:
        return 1.0
    return _klucb_upper(mean, klucb_threshold(n) / count, tolerance)


def _klucb_upper(mean: float, level: float, tolerance: float) -> float:
    if bernoulli_kl(mean, 1.0) <= level:
        return 1.0
    # Pinsker: d(p, q) >= 2 (q - p)^2 bounds the root from above
    lo, hi = mean, min(1.0, mean + math.sqrt(level / 2.0))
    if hi < 1.0 and _kl_inner(mean, hi) <= level:
        return hi
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if _kl_inner(mean, mid) <= level:
            lo = mid
        else:
            hi = mid
    return lo


class ThompsonSampling:
    """Beta-Bernoulli Thompson sampling with Beta(1, 1) priors."""

    name = "ts"

    def __init__(self, n_arms: int):
        if n_arms < 1:
            raise ValueError("need at least one arm")
        self.alpha = np.ones(n_arms)
        self.beta = np.ones(n_arms)

    @property
    def counts(self) -> np.ndarray:
        return (self.alpha + self.beta - 2).astype(np.int64)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def select(self, rng: np.random.Generator) -> int:
        return int(np.argmax(rng.beta(self.alpha, self.beta)))

    def update(self, arm: int, reward: int) -> "ThompsonSampling":
        if reward == 1:
            self.alpha[arm] += 1
        elif reward == 0:
            self.beta[arm] += 1
        else:
            raise ValueError(f"Bernoulli reward expected, got {reward!r}")
        return self

    def state(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


class KLUCB:
    """KL-UCB for Bernoulli rewards (Cappé et al. 2013)."""

    name = "klucb"

    def __init__(self, n_arms: int, tolerance: float = 1e-6):
        if n_arms < 1:
            raise ValueError("need at least one arm")
        if tolerance <= 0:
            raise ValueError("tolerance must be positive")
        self.tolerance = tolerance
        self.counts = np.zeros(n_arms, dtype=np.int64)
        self.successes = np.zeros(n_arms, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def means(self) -> np.ndarray:
        return np.divide(self.successes, self.counts, out=np.zeros(len(self.counts)), where=self.counts > 0)

    def indices(self) -> list[float]:
        f = klucb_threshold(self.n + 1)
        counts, succ = self.counts.tolist(), self.successes.tolist()
        return [
            _klucb_upper(s / c, f / c, self.tolerance) if c else 1.0 for c, s in zip(counts, succ)
        ]

    def select(self, rng: np.random.Generator | None = None) -> int:
        unexplored = np.flatnonzero(self.counts == 0)
        if len(unexplored):
            return int(unexplored[0])
        idx = self.indices()
        return idx.index(max(idx))

    def update(self, arm: int, reward: int) -> "KLUCB":
        if reward not in (0, 1):
            raise ValueError(f"Bernoulli reward expected, got {reward!r}")
        self.counts[arm] += 1
        self.successes[arm] += reward
        return self

    def state(self) -> dict:
        return {"counts": self.counts.tolist(), "successes": self.successes.tolist()}


class GreedyOracle:
    """Always plays the arm with the highest known mean (exact selection)."""

    name = "oracle"

    def __init__(self, means: Sequence[float]):
        from .inference import argmax_lowest

        self.best = argmax_lowest(means)
        self.counts = np.zeros(len(means), dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def select(self, rng=None) -> int:
        return self.best

    def update(self, arm: int, reward: int) -> "GreedyOracle":
        self.counts[arm] += 1
        return self

    def state(self) -> dict:
        return {"counts": self.counts.tolist()}


def make_policy(name: str, n_arms: int, *, tolerance: float = 1e-6, means=None):
    if name == "ts":
        return ThompsonSampling(n_arms)
    if name == "klucb":
        return KLUCB(n_arms, tolerance)
    if name == "oracle":
        if means is None:
            raise ValueError("the oracle policy needs the arm means")
        return GreedyOracle(means)
    raise ValueError(f"unknown policy {name!r}")


@dataclass(frozen=True)
class PlayTrace:
    """Arms played and rewards received in one trial, scored against ``means``."""

    arms: np.ndarray
    rewards: np.ndarray
    means: np.ndarray

    def __len__(self):
        return len(self.arms)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.arms, minlength=len(self.means)).astype(np.int64)

    @property
    def inst_regret(self) -> np.ndarray:
        if len(self.means) == 0:
            return np.zeros(0)
        return (self.means.max() - self.means)[self.arms]

    @property
    def cum_regret(self) -> np.ndarray:
        return cumulative_regret(self.arms, self.means)

    @property
    def optimal(self) -> np.ndarray:
        from .inference import TIE_TOL

        return self.means[self.arms] >= self.means.max() - TIE_TOL

    @property
    def final_regret(self) -> float:
        """Correctly rounded sum of the per-round gaps (no accumulated float error)."""
        return math.fsum(self.inst_regret.tolist())


def cumulative_regret(arms, means) -> np.ndarray:
    """R_n = sum over rounds k <= n of (mu* - mu_{A_k})."""
    arms = np.asarray(arms, dtype=np.int64)
    means = np.asarray(means, dtype=float)
    if len(arms) == 0:
        return np.zeros(0)
    return np.cumsum((means.max() - means)[arms])


def play_trial(
    means: Sequence[float],
    policy,
    horizon: int,
    rng: np.random.Generator,
    regret_means: Sequence[float] | None = None,
    sampler: Callable[[int, np.random.Generator], int] | None = None,
) -> tuple[PlayTrace, object]:
    """Run ``horizon`` rounds of select, Bernoulli reward, update.

    Rewards are drawn from ``means`` unless a ``sampler(arm, rng)`` is given.
    Regret is scored against ``regret_means`` (default ``means``).
    """
    means = np.asarray(means, dtype=float)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if len(means) == 0:
        raise ValueError("need at least one arm")
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon, dtype=np.int8)
    if sampler is None:
        u = rng.random(horizon)
        mu = means.tolist()
        for k in range(horizon):
            a = policy.select(rng)
            r = 1 if u[k] < mu[a] else 0
            policy.update(a, r)
            arms[k] = a
            rewards[k] = r
    else:
        for k in range(horizon):
            a = policy.select(rng)
            r = int(sampler(a, rng))
            policy.update(a, r)
            arms[k] = a
            rewards[k] = r
    score = means if regret_means is None else np.asarray(regret_means, dtype=float)
    return PlayTrace(arms, rewards, score), policy


def replay(trace: PlayTrace, policy):
    """Feed a trace back through ``policy.update``; used to check state reconstruction."""
    for a, r in zip(trace.arms.tolist(), trace.rewards.tolist()):
        policy.update(a, r)
    return policy
