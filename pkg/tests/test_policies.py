import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccb.policies import (
    KLUCB,
    GreedyOracle,
    PlayTrace,
    ThompsonSampling,
    bernoulli_kl,
    cumulative_regret,
    klucb_index,
    klucb_threshold,
    make_policy,
    play_trial,
    replay,
)

TOY0 = [0.493, 0.507, 0.773, 0.227]


def test_kl_values():
    assert bernoulli_kl(0.5, 0.75) == pytest.approx(0.5 * math.log(4 / 3), abs=1e-15)
    assert bernoulli_kl(0.5, 0.75) == pytest.approx(0.143841036, abs=1e-9)
    assert bernoulli_kl(0.3, 0.3) == 0.0
    assert bernoulli_kl(0.0, 0.5) == pytest.approx(math.log(2))
    assert bernoulli_kl(1.0, 0.0) == math.inf
    assert bernoulli_kl(0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        bernoulli_kl(1.2, 0.5)


def grid_index(count, mean, n, steps=200_001):
    """Largest grid point q >= mean with count * d(mean, q) <= f(n)."""
    level = klucb_threshold(n) / count
    best = mean
    for q in np.linspace(mean, 1.0, steps):
        if bernoulli_kl(mean, float(q)) <= level:
            best = float(q)
    return best


@pytest.mark.parametrize("count,mean,n", [(10, 0.3, 50), (100, 0.5, 1000), (3, 0.0, 10), (500, 0.9, 9000), (1, 1.0, 5)])
def test_klucb_index_matches_grid_search(count, mean, n):
    got = klucb_index(count, mean, n, 1e-9)
    assert got == pytest.approx(grid_index(count, mean, n), abs=1e-5)


def test_klucb_index_edge_cases():
    assert klucb_index(0, 0.0, 1) == 1.0
    with pytest.raises(ValueError):
        klucb_index(3, 0.5, 10, tolerance=0)
    assert klucb_threshold(1) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    count=st.integers(min_value=1, max_value=5000),
    succ_frac=st.floats(min_value=0, max_value=1),
    n=st.integers(min_value=1, max_value=100_000),
)
def test_klucb_index_properties(count, succ_frac, n):
    mean = round(succ_frac * count) / count
    idx = klucb_index(count, mean, n)
    assert mean - 1e-12 <= idx <= 1.0
    # more pulls shrink the index, more rounds widen it
    assert klucb_index(count + 1, mean, n) <= idx + 1e-6
    assert klucb_index(count, mean, n + 1) >= idx - 1e-6
    assert count * bernoulli_kl(mean, idx) <= klucb_threshold(n) + 1e-9


def test_klucb_plays_each_arm_first():
    policy = KLUCB(4)
    rng = np.random.default_rng(0)
    seen = []
    for _ in range(4):
        a = policy.select(rng)
        seen.append(a)
        policy.update(a, 0)
    assert seen == [0, 1, 2, 3]


def test_policy_updates_validate():
    with pytest.raises(ValueError):
        ThompsonSampling(2).update(0, 2)
    with pytest.raises(ValueError):
        KLUCB(2).update(0, -1)
    with pytest.raises(ValueError):
        ThompsonSampling(0)
    with pytest.raises(ValueError):
        make_policy("eps", 3)
    with pytest.raises(ValueError):
        make_policy("oracle", 3)


def test_ts_posterior_counts():
    ts = ThompsonSampling(3)
    for a, r in [(0, 1), (0, 0), (2, 1)]:
        ts.update(a, r)
    assert ts.alpha.tolist() == [2, 1, 2] and ts.beta.tolist() == [2, 1, 1]
    assert ts.counts.tolist() == [2, 0, 1] and ts.n == 3


@pytest.mark.parametrize("name", ["ts", "klucb"])
def test_policies_concentrate_on_best_arm(name):
    trace, policy = play_trial(TOY0, make_policy(name, 4), 4000, np.random.default_rng(7))
    counts = trace.counts
    assert counts.sum() == 4000
    assert int(np.argmax(counts)) == 2
    assert counts[2] > 0.9 * 4000


def test_oracle_policy_has_zero_regret():
    trace, _ = play_trial(TOY0, GreedyOracle(TOY0), 100, np.random.default_rng(0))
    assert (trace.arms == 2).all() and trace.final_regret == 0.0


@pytest.mark.parametrize("name", ["ts", "klucb"])
def test_replay_reconstructs_state(name):
    trace, policy = play_trial(TOY0, make_policy(name, 4), 500, np.random.default_rng(3))
    rebuilt = replay(trace, make_policy(name, 4))
    assert rebuilt.state() == policy.state()


def test_same_seed_same_trace():
    a, _ = play_trial(TOY0, make_policy("ts", 4), 300, np.random.default_rng(9))
    b, _ = play_trial(TOY0, make_policy("ts", 4), 300, np.random.default_rng(9))
    np.testing.assert_array_equal(a.arms, b.arms)
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_alternating_regret():
    for n in (1, 2, 7, 10):
        arms = np.array([3 if k % 2 == 0 else 2 for k in range(n)])
        cr = cumulative_regret(arms, TOY0)
        assert cr[-1] == pytest.approx(0.546 * math.ceil(n / 2))
        assert np.all(np.diff(cr) >= 0)


def test_trace_decomposition():
    trace, _ = play_trial(TOY0, make_policy("ts", 4), 2000, np.random.default_rng(1))
    gaps = max(TOY0) - np.array(TOY0)
    assert trace.final_regret == pytest.approx(float(np.dot(gaps, trace.counts)), abs=1e-9)
    assert trace.optimal.sum() == trace.counts[2]


def test_regret_scored_against_other_means():
    agent = [0.9, 0.1]
    true = [0.2, 0.8]
    trace, _ = play_trial(agent, GreedyOracle(agent), 10, np.random.default_rng(0), regret_means=true)
    assert trace.final_regret == pytest.approx(6.0)
    empty = PlayTrace(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int8), np.array(true))
    assert empty.final_regret == 0.0


def test_custom_sampler_is_used():
    trace, _ = play_trial([0.5, 0.5], KLUCB(2), 20, np.random.default_rng(0), sampler=lambda a, rng: a)
    assert (trace.rewards == trace.arms).all()
    with pytest.raises(ValueError):
        play_trial([0.5], KLUCB(1), 0, np.random.default_rng(0))
