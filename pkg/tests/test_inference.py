import numpy as np
import pytest

from conftest import all_binary, full_slices, lag1_slices, toy_oracle_mean
from ccb.arms import enumerate_all_arms
from ccb.inference import (
    argmax_lowest,
    conditioning_sets,
    confounded_variables,
    exact_interventional_mean,
    exact_reward_table,
    fit_structural_pmfs,
    generate_observational,
    monte_carlo_mean,
    read_dataset_csv,
    simulate_from_fitted,
    slice_distribution,
    transfer_bias_report,
    window_interventions,
    write_dataset_csv,
    write_estimated_sem,
)
from ccb.scm import NO_INTERVENTION, Intervention, do, intervene, unroll

ARMS = [{}] + [{"X": v} for v in (0, 1)] + [{"Z": v} for v in (0, 1)] + all_binary(["X", "Z"])
HISTORIES = [
    [],
    [{"Z": 0}],
    [{"Z": 0}, {"X": 1}],
    [{"X": 1}, {"Z": 1}, {"X": 0}],
    [{"Z": 0}, {"X": 1}, {"Z": 1}, {"X": 1}],
    [{}, {"Z": 1, "X": 0}, {}, {"Z": 0}],
]


def as_do(d):
    return Intervention.from_mapping(d)


def test_trial0_matches_enumeration(toy):
    for arm in ARMS:
        assert exact_interventional_mean(toy, as_do(arm)) == pytest.approx(toy_oracle_mean([arm]), abs=1e-12)


@pytest.mark.parametrize("history", HISTORIES, ids=lambda h: f"t{len(h)}")
@pytest.mark.parametrize("window", ["lag1", "full"])
def test_conditional_means_match_enumeration(toy, history, window):
    slices = lag1_slices if window == "lag1" else full_slices
    hist = [as_do(h) for h in history]
    for arm in [{"X": 0}, {"X": 1}, {"Z": 0}, {"Z": 1}, {}]:
        got = exact_interventional_mean(toy, as_do(arm), hist, window)
        assert got == pytest.approx(toy_oracle_mean(slices(history, arm)), abs=1e-12)


def test_trial0_table_values(toy, pomis_arms):
    table = exact_reward_table(toy, pomis_arms)
    np.testing.assert_allclose(table.means, [0.493, 0.507, 0.773, 0.227], atol=1e-12)
    assert table.best == 2
    assert exact_interventional_mean(toy, NO_INTERVENTION) == pytest.approx(0.4454, abs=1e-12)


def test_trial1_table_after_z0(toy, pomis_arms):
    table = exact_reward_table(toy, pomis_arms, [do(Z=0)])
    np.testing.assert_allclose(table.means, [0.493, 0.503822, 0.4943706, 0.5024514], atol=1e-12)
    assert str(pomis_arms[table.best]) == "do(X=1)"
    assert table.max_gap() == pytest.approx(0.503822 - 0.493)


def test_windows_agree_up_to_one_step(toy, pomis_arms):
    for history in ([], [do(Z=0)], [do(X=1)]):
        a = exact_reward_table(toy, pomis_arms, history, "lag1").means
        b = exact_reward_table(toy, pomis_arms, history, "full").means
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_windows_diverge_with_longer_history(toy, pomis_arms):
    # do(Z=0) two trials back keeps Z at 0 forever under the full window
    history = [do(Z=0), do(X=1)]
    a = exact_reward_table(toy, pomis_arms, history, "lag1").means
    b = exact_reward_table(toy, pomis_arms, history, "full").means
    assert np.abs(a - b).max() > 1e-3


def test_lag1_ignores_older_history(toy, pomis_arms):
    base = exact_reward_table(toy, pomis_arms, [do(Z=0), do(Z=1), do(X=1)]).means
    other = exact_reward_table(toy, pomis_arms, [do(X=0), do(X=1), do(X=1)]).means
    np.testing.assert_array_equal(base, other)


def test_window_interventions():
    h = [do(Z=0), do(X=1)]
    assert window_interventions(h, do(Z=1), "full") == [do(Z=0), do(X=1), do(Z=1)]
    assert window_interventions(h, do(Z=1), "lag1") == [NO_INTERVENTION, do(X=1), do(Z=1)]
    assert window_interventions([], do(X=0), "lag1") == [do(X=0)]
    with pytest.raises(ValueError):
        window_interventions(h, do(Z=1), "lag2")


def test_slice_distribution_is_a_pmf(toy):
    dist = slice_distribution(intervene(toy, [do(Z=0), NO_INTERVENTION, NO_INTERVENTION]))
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(p >= 0 for p in dist.values())
    z = list(toy.variables).index("Z")
    assert sum(p for row, p in dist.items() if row[z] == 1) == pytest.approx(0.0)


def test_invalid_interventions_raise(toy):
    with pytest.raises(ValueError):
        exact_interventional_mean(toy, do(Y=1))
    with pytest.raises(ValueError):
        exact_interventional_mean(toy, do(X=0), [do(Q=1)])


def test_argmax_lowest():
    assert argmax_lowest([0.2, 0.5, 0.5]) == 1
    assert argmax_lowest([0.5, 0.5 + 1e-14, 0.1]) == 0
    assert argmax_lowest([0.1, 0.3]) == 1


def test_all_arm_table_size(toy):
    table = exact_reward_table(toy, enumerate_all_arms(toy.manipulative, toy.variables))
    assert len(table.means) == 9
    assert table.means[0] == pytest.approx(0.4454)


@pytest.mark.parametrize("history", [[], [do(Z=0)], [do(Z=0), do(X=1)]])
def test_monte_carlo_within_four_se(toy, pomis_arms, history):
    rng = np.random.default_rng(11)
    for arm in pomis_arms:
        mc = monte_carlo_mean(toy, arm.intervention, history, "lag1", 50_000, rng)
        exact = exact_interventional_mean(toy, arm.intervention, history)
        assert abs(mc.mean - exact) <= 4 * mc.se


def test_generate_observational_errors(toy):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        generate_observational(unroll(toy, 2), 0, rng)
    with pytest.raises(ValueError):
        generate_observational(intervene(toy, [do(Z=0), NO_INTERVENTION]), 10, rng)


def test_dataset_csv_round_trip(toy, tmp_path):
    data = generate_observational(unroll(toy, 3), 50, np.random.default_rng(1))
    path = tmp_path / "obs.csv"
    write_dataset_csv(data, path)
    back = read_dataset_csv(path)
    assert back.variables == data.variables
    np.testing.assert_array_equal(back.values, data.values)


@pytest.fixture(scope="module")
def fhat(toy):
    data = generate_observational(unroll(toy, 5), 100_000, np.random.default_rng(2024))
    return fit_structural_pmfs(data, toy, smoothing=1.0)


def test_fitted_pmfs_are_consistent(fhat):
    z0 = fhat.mechanism("Z", 0)
    assert z0.probs[1] == pytest.approx(0.6, abs=0.01)
    # Z[t] = U_Z and Z[t-1]: once 0, always 0
    zt = fhat.mechanism("Z", 3)
    assert zt.probs[0, 1] < 1e-3
    assert zt.probs[1, 1] == pytest.approx(0.6, abs=0.01)
    assert fhat.exogenous["U_Z"][1] == pytest.approx(0.6, abs=0.01)
    for m in list(fhat.t0.values()) + list(fhat.t.values()):
        np.testing.assert_allclose(m.probs.sum(axis=-1), 1.0)


def test_fit_rejects_single_slice(toy):
    data = generate_observational(unroll(toy, 1), 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        fit_structural_pmfs(data, toy)


def test_simulator_recovers_unconfounded_arms(fhat, toy):
    rng = np.random.default_rng(5)
    for arm in (do(Z=0), do(Z=1), NO_INTERVENTION):
        est = simulate_from_fitted(fhat, arm, (), "lag1", 100_000, rng)
        assert est == pytest.approx(exact_interventional_mean(toy, arm), abs=0.02)


def test_bias_report_flags_confounded_arms(fhat, toy, pomis_arms):
    assert confounded_variables(toy, 0) == {"X", "Y"}
    rows = transfer_bias_report(fhat, pomis_arms, (), "lag1", 50_000, np.random.default_rng(6))
    assert [r.confounded for r in rows] == [True, True, False, False]
    for r in rows:
        assert r.exact == pytest.approx(exact_interventional_mean(toy, pomis_arms[r.arm_id].intervention))
        if not r.confounded:
            assert abs(r.bias) < 0.02
    # the confounded arms are visibly off: P(Y | X) is not P(Y | do(X))
    assert max(abs(r.bias) for r in rows if r.confounded) > 0.05


def test_estimated_sem_dump(fhat, tmp_path):
    path = tmp_path / "fhat.txt"
    write_estimated_sem(fhat, path)
    text = path.read_text()
    assert "P(Y | X, Y[t-1], Z, X[t-1])" in text and "[exogenous]" in text


def test_conditioning_sets(toy):
    assert conditioning_sets(toy, 0) == {"Z": [], "X": [("Z", 0)], "Y": [("X", 0), ("Z", 0)]}
    later = conditioning_sets(toy, 1)
    assert later["Z"] == [("Z", 1)]
    assert later["Y"][:2] == [("X", 0), ("Y", 1)]
    assert set(later["Y"]) == {("X", 0), ("Y", 1), ("Z", 0), ("X", 1)}


def test_simulator_tracks_history(fhat, toy):
    rng = np.random.default_rng(8)
    history = [do(Z=0)]
    for arm in (do(Z=0), do(Z=1)):
        est = simulate_from_fitted(fhat, arm, history, "lag1", 100_000, rng)
        assert est == pytest.approx(exact_interventional_mean(toy, arm, history), abs=0.02)
