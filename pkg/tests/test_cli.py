import csv
import json

import numpy as np
import pytest
import yaml

from ccb.cli import main
from ccb.config import bundled_path
from ccb.engine import RunConfig, run_ccb
from ccb.reports import read_csv, read_trace_csv, write_trace_csv

TOY = str(bundled_path("toy_experiment.yaml"))
ARTIFACTS = ["summary.csv", "reward_tables.csv", "curves.csv", "trial_stats.csv"]


def rows(text):
    return list(csv.DictReader(text.splitlines()))


def test_arms_counts(capsys):
    assert main(["arms", "--config", TOY, "--arm-mode", "all"]) == 0
    assert len(rows(capsys.readouterr().out)) == 9
    assert main(["arms", "--config", TOY]) == 0
    out = rows(capsys.readouterr().out)
    assert len(out) == 4 and all(r["pomis_flag"] == "1" for r in out)


def test_rewards_table(capsys, tmp_path):
    assert main(["rewards", "--config", TOY, "--out", str(tmp_path)]) == 0
    out = read_csv(tmp_path / "rewards.csv")
    assert len(out) == 20
    chosen = [r["arm"] for r in out if r["argmax_flag"] == "1"]
    assert chosen == ["do(Z=0)", "do(X=1)", "do(Z=1)", "do(X=1)", "do(Z=1)"]
    assert main(["rewards", "--config", TOY, "--trials", "1"]) == 0
    one = rows(capsys.readouterr().out)
    assert float(one[2]["mean"]) == pytest.approx(0.773)


def test_usage_and_config_errors(tmp_path, capsys):
    assert main(["rewards", "--config", TOY, "--trials", "0"]) == 1
    assert main(["rewards", "--config", str(tmp_path / "nope.yaml")]) == 1
    with pytest.raises(SystemExit) as err:
        main(["explode"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["run", "--config", TOY, "--policy", "eps"])
    assert err.value.code == 1


def test_bad_pomis_is_a_validation_failure(tmp_path, capsys):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"scm": str(bundled_path("toy_scm.yaml")), "arms": {"mode": "pomis", "pomis": [["X", "Z"]]}}))
    assert main(["arms", "--config", str(path)]) == 2
    assert "not a minimal intervention set" in capsys.readouterr().err
    assert main(["validate", "--config", str(path)]) == 2


def test_validate_toy(capsys):
    assert main(["validate", "--config", TOY, "--mc-samples", "20000"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 3 + 20


def test_validate_cyclic_template(tmp_path, capsys):
    scm = {
        "reward": "B",
        "variables": [{"name": "A"}, {"name": "B"}],
        "exogenous": [{"name": "U", "p": 0.5}],
        "functions_t0": {"A": {"expr": {"xor": ["U", "B"]}}, "B": {"expr": "A"}},
    }
    path = tmp_path / "cyclic.yaml"
    path.write_text(yaml.safe_dump(scm))
    assert main(["validate", "--config", str(path)]) == 2
    assert "cycle" in capsys.readouterr().out


def run_small(out, *extra):
    args = ["run", "--config", TOY, "--replicates", "2", "--horizon", "300", "--seed", "11",
            "--out", str(out), "--jobs", "1", *extra]
    return main(args)


def test_run_artifacts_and_manifest_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_small(a, "--save-traces") == 0
    summary = read_csv(a / "summary.csv")
    assert len(summary) == 2 * 2 * 5
    assert {r["mode"] for r in summary} == {"ccb", "scm-mab"}
    for r in summary:
        assert r["final_regret"] == r["decomposed_regret"]
    assert len(read_csv(a / "reward_tables.csv")) == 2 * 2 * 5 * 4
    assert len(read_csv(a / "curves.csv")) == 2 * 5 * 300
    assert len(read_csv(a / "trial_stats.csv")) == 2 * 5
    assert len(list((a / "traces").iterdir())) == 2 * 2 * 5

    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["replicates"] == 2 and manifest["horizon"] == 300
    assert main(["run", "--config", str(a / "manifest.json"), "--out", str(b), "--jobs", "1"]) == 0
    for name in ARTIFACTS + ["manifest.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for trace in (a / "traces").iterdir():
        assert trace.read_bytes() == (b / "traces" / trace.name).read_bytes()


def test_klucb_same_schema(tmp_path):
    assert run_small(tmp_path / "k", "--policy", "klucb", "--mode", "ccb") == 0
    summary = read_csv(tmp_path / "k" / "summary.csv")
    assert list(summary[0]) == ["mode", "replicate", "trial", "implemented_arm", "implemented", "final_regret", "decomposed_regret"]
    assert {r["mode"] for r in summary} == {"ccb"}


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run_small(blocker / "sub") == 1


def test_trace_round_trip(toy, pomis_arms, tmp_path):
    run = run_ccb(RunConfig(toy, pomis_arms, trials=1, horizon=200), seed=0)
    trace = run.trials[0].trace
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path, trace.means)
    np.testing.assert_array_equal(back.arms, trace.arms)
    np.testing.assert_array_equal(back.rewards, trace.rewards)
    assert back.final_regret == trace.final_regret
