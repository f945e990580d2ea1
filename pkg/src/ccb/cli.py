"""Command-line experiment runner.

Subcommands: ``validate``, ``arms``, ``rewards`` and ``run``. Exit codes are
0 on success, 1 for configuration or usage errors and 2 when a validation
check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as cfgio
from .arms import (
    ArmTable,
    check_mis_time_invariance,
    enumerate_all_arms,
    enumerate_mis,
    mis_arms,
    pomis_from_config,
    slice_diagram,
    write_arm_table_csv,
)
from .engine import RunConfig, oracle_sequence, run_replicates
from .inference import monte_carlo_mean
from .reports import (
    SUMMARY_HEADER,
    TABLE_HEADER,
    RegretCurves,
    summary_rows,
    table_rows,
    write_oscillation_csv,
    write_trace_csv,
)
from .scm import ScmTemplate, validate_template

log = logging.getLogger("ccb")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2


class ValidationFailure(Exception):
    pass


@dataclass
class ExperimentConfig:
    template: ScmTemplate
    scm_tree: dict
    trials: int = 5
    horizon: int | list[int] = 10_000
    policy: str = "ts"
    tolerance: float = 1e-6
    arm_mode: str = "pomis"
    pomis: list[list[str]] = field(default_factory=list)
    window: str = "lag1"
    estimation: str = "oracle"
    n_obs: int = 100_000
    smoothing: float = 1.0
    n_sim: int = 100_000
    reward_sampling: str = "table"
    replicates: int = 100
    seed: int = 0
    mode: str = "both"
    save_traces: bool = False
    out: Path | None = None

    def validate(self):
        if self.trials < 1:
            raise cfgio.ConfigError("trials must be at least 1")
        if self.replicates < 1:
            raise cfgio.ConfigError("replicates must be at least 1")
        horizons = self.horizon if isinstance(self.horizon, list) else [self.horizon]
        if any(int(h) < 1 for h in horizons):
            raise cfgio.ConfigError("horizons must be positive")
        if self.policy not in ("ts", "klucb", "oracle"):
            raise cfgio.ConfigError(f"unknown policy {self.policy!r}")
        if self.arm_mode not in ("all", "mis", "pomis"):
            raise cfgio.ConfigError(f"unknown arm mode {self.arm_mode!r}")
        if self.arm_mode == "pomis" and not self.pomis:
            raise cfgio.ConfigError("arm mode 'pomis' needs a pomis file or inline sets")
        if self.mode not in ("ccb", "scm-mab", "both"):
            raise cfgio.ConfigError(f"unknown run mode {self.mode!r}")
        unknown = sorted({v for s in self.pomis for v in s} - set(self.template.variables))
        if unknown:
            raise cfgio.ConfigError(f"pomis sets name unknown variables {unknown}")

    def manifest(self) -> dict:
        """Everything that determines the run's artifacts, with the SCM inlined."""
        return {
            "scm": self.scm_tree,
            "trials": self.trials,
            "horizon": self.horizon,
            "policy": {"name": self.policy, "tolerance": self.tolerance},
            "arms": {"mode": self.arm_mode, "pomis": [list(s) for s in self.pomis]},
            "window": self.window,
            "estimation": {
                "mode": self.estimation,
                "n_obs": self.n_obs,
                "smoothing": self.smoothing,
                "n_sim": self.n_sim,
            },
            "reward_sampling": self.reward_sampling,
            "replicates": self.replicates,
            "seed": self.seed,
            "mode": self.mode,
            "save_traces": self.save_traces,
        }


def load_experiment(source) -> ExperimentConfig:
    """Load an experiment config (or a bare SCM file, which gets default settings)."""
    path = None if isinstance(source, dict) else Path(source)
    tree = cfgio.read_tree(source)
    base = path.parent if path is not None else Path.cwd()

    def resolve(p):
        return p if isinstance(p, dict) else base / p

    if "variables" in tree:
        scm_tree, tree = tree, {}
    else:
        if "scm" not in tree:
            raise cfgio.ConfigError("experiment config needs an 'scm' entry")
        scm_tree = cfgio.read_tree(resolve(tree["scm"]))
    template = cfgio.template_from_dict(scm_tree)
    # inline the explicit tables so the manifest does not depend on expression parsing
    scm_tree = cfgio.template_to_dict(template)

    arms = tree.get("arms", {})
    pomis = arms.get("pomis")
    if pomis is None and "pomis_file" in arms:
        pomis = cfgio.read_tree(resolve(arms["pomis_file"])).get("sets")
        if pomis is None:
            raise cfgio.ConfigError("pomis file needs a 'sets' list")
    policy = tree.get("policy", {})
    if isinstance(policy, str):
        policy = {"name": policy}
    est = tree.get("estimation", {})
    if isinstance(est, str):
        est = {"mode": est}
    horizon = tree.get("horizon", 10_000)
    try:
        cfg = ExperimentConfig(
            template=template,
            scm_tree=scm_tree,
            trials=int(tree.get("trials", 5)),
            horizon=[int(h) for h in horizon] if isinstance(horizon, list) else int(horizon),
            policy=str(policy.get("name", "ts")),
            tolerance=float(policy.get("tolerance", 1e-6)),
            arm_mode=str(arms.get("mode", "pomis" if pomis else "all")),
            pomis=[[str(v) for v in s] for s in (pomis or [])],
            window=str(tree.get("window", "lag1")),
            estimation=str(est.get("mode", "oracle")),
            n_obs=int(est.get("n_obs", 100_000)),
            smoothing=float(est.get("smoothing", 1.0)),
            n_sim=int(est.get("n_sim", 100_000)),
            reward_sampling=str(tree.get("reward_sampling", "table")),
            replicates=int(tree.get("replicates", 100)),
            seed=int(tree.get("seed", 0)),
            mode=str(tree.get("mode", "both")),
            save_traces=bool(tree.get("save_traces", False)),
            out=Path(tree["out"]) if "out" in tree else None,
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise cfgio.ConfigError(f"malformed experiment config: {exc}") from exc
    return cfg


def build_arm_table(cfg: ExperimentConfig) -> ArmTable:
    template = cfg.template
    mis = enumerate_mis(slice_diagram(template, 0), template.reward)
    if cfg.arm_mode == "pomis":
        try:
            return pomis_from_config(cfg.pomis, mis, template.variables, list(template.variables))
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from exc
    if cfg.arm_mode == "mis":
        return mis_arms(template)
    table = enumerate_all_arms(template.manipulative, template.variables)
    return replace(table, pomis_sets=tuple(frozenset(s) for s in cfg.pomis))


def run_config(cfg: ExperimentConfig, arms: ArmTable) -> RunConfig:
    return RunConfig(
        template=cfg.template,
        arms=arms,
        trials=cfg.trials,
        horizon=tuple(cfg.horizon) if isinstance(cfg.horizon, list) else cfg.horizon,
        policy=cfg.policy,
        tolerance=cfg.tolerance,
        window=cfg.window,
        estimation=cfg.estimation,
        n_obs=cfg.n_obs,
        smoothing=cfg.smoothing,
        n_sim=cfg.n_sim,
        reward_sampling=cfg.reward_sampling,
    )


def _ensure_template(cfg: ExperimentConfig):
    report = validate_template(cfg.template)
    if not report.ok:
        raise ValidationFailure("; ".join(str(i) for i in report.issues))


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    """Template checks, MIS time invariance, POMIS membership and Monte Carlo vs exact."""
    ok = True

    def line(passed, what):
        nonlocal ok
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {what}")

    report = validate_template(cfg.template)
    line(report.ok, "template invariants" + ("" if report.ok else ": " + "; ".join(map(str, report.issues))))
    if not report.ok:
        return EXIT_VALIDATION
    inv = check_mis_time_invariance(cfg.template, max(cfg.trials, 2))
    mis0 = ", ".join("{" + ",".join(sorted(s)) + "}" for s in inv.per_slice[0])
    line(inv.ok, f"MIS time invariance over {max(cfg.trials, 2)} slices (slice 0: {mis0})")
    try:
        arms = build_arm_table(cfg)
    except ValidationFailure as exc:
        line(False, f"arm table: {exc}")
        return EXIT_VALIDATION
    line(True, f"arm table ({arms.mode}, {len(arms)} arms)")

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xC0DE,)))
    history = []
    for i, table in enumerate(oracle_sequence(cfg.template, arms, cfg.trials, cfg.window)):
        for a in arms:
            mc = monte_carlo_mean(cfg.template, a.intervention, history, cfg.window, args.mc_samples, rng)
            exact = float(table.means[a.id])
            bound = 4.0 * max(mc.se, 1.0 / mc.n)
            line(abs(mc.mean - exact) <= bound,
                 f"trial {i} {a}: exact {exact:.6f}, Monte Carlo {mc.mean:.6f} (4 SE = {bound:.6f})")
        history.append(arms[table.best].intervention)
    return EXIT_OK if ok else EXIT_VALIDATION


def _write_manifest(cfg: ExperimentConfig, out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(cfg.manifest(), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise cfgio.ConfigError(f"cannot write to {out}: {exc}") from exc


def _emit(cfg: ExperimentConfig, name: str, write) -> None:
    """Write one CSV to stdout, or into ``cfg.out`` next to a manifest."""
    if cfg.out is None:
        write(sys.stdout)
        return
    _write_manifest(cfg, cfg.out)
    with open(cfg.out / name, "w", newline="") as fh:
        write(fh)


def cmd_arms(cfg: ExperimentConfig, args) -> int:
    _ensure_template(cfg)
    arms = build_arm_table(cfg)
    _emit(cfg, "arms.csv", lambda fh: write_arm_table_csv(arms, fh))
    return EXIT_OK


def cmd_rewards(cfg: ExperimentConfig, args) -> int:
    _ensure_template(cfg)
    arms = build_arm_table(cfg)
    tables = oracle_sequence(cfg.template, arms, cfg.trials, cfg.window)
    from .engine import OscillationRow

    rows = [OscillationRow(i, tuple(map(float, t.means)), t.best, t.best) for i, t in enumerate(tables)]
    _emit(cfg, "rewards.csv", lambda fh: write_oscillation_csv(rows, arms, fh))
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args) -> int:
    _ensure_template(cfg)
    arms = build_arm_table(cfg)
    out = cfg.out or Path("results")
    _write_manifest(cfg, out)
    rc = run_config(cfg, arms)
    modes = ("ccb", "scm-mab") if cfg.mode == "both" else (cfg.mode,)
    curves = RegretCurves()
    if cfg.save_traces:
        (out / "traces").mkdir(exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fs, open(out / "reward_tables.csv", "w", newline="") as ft:
        ws, wt = csv.writer(fs, lineterminator="\n"), csv.writer(ft, lineterminator="\n")
        ws.writerow(SUMMARY_HEADER)
        wt.writerow(TABLE_HEADER)
        for rep, mode, run in run_replicates(rc, cfg.seed, cfg.replicates, modes, args.jobs):
            log.info("replicate %d %s: implemented %s", rep, mode, " ".join(map(str, run.implemented)))
            ws.writerows(summary_rows(run, rep))
            wt.writerows(table_rows(run, rep))
            curves.add(run)
            if cfg.save_traces:
                for t in run.trials:
                    write_trace_csv(t.trace, out / "traces" / f"{mode}_rep{rep:03d}_trial{t.index}.csv")
    curves.write(out)
    for mode in modes:
        for i in range(cfg.trials):
            s = curves.stats(mode, i)
            print(f"{mode:8s} trial {i}: final regret {s['mean_final_regret']:.3f} ± {s['sd_final_regret']:.3f}"
                  f"  P(optimal at N) {s['optimal_arm_prob_final']:.3f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccb", description="Chronological causal bandit experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config or SCM file (YAML/JSON)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--window", choices=["lag1", "full"])
        p.add_argument("--out", type=Path)

    p = sub.add_parser("validate", help="check the template, MIS invariance and Monte Carlo agreement")
    common(p)
    p.add_argument("--mc-samples", type=int, default=20_000)
    p = sub.add_parser("arms", help="write the arm table")
    common(p)
    p.add_argument("--arm-mode", choices=["all", "mis", "pomis"])
    p = sub.add_parser("rewards", help="exact per-trial rewards along the optimal sequence")
    common(p)
    p = sub.add_parser("run", help="replicated bandit runs")
    common(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--policy", choices=["ts", "klucb", "oracle"])
    p.add_argument("--mode", choices=["ccb", "scm-mab", "both"])
    p.add_argument("--estimation", choices=["oracle", "observational"])
    p.add_argument("--save-traces", action="store_true", default=None)
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for flag, attr in [
        ("seed", "seed"), ("trials", "trials"), ("window", "window"), ("out", "out"),
        ("replicates", "replicates"), ("horizon", "horizon"), ("policy", "policy"),
        ("mode", "mode"), ("estimation", "estimation"), ("save_traces", "save_traces"),
        ("arm_mode", "arm_mode"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


COMMANDS = {"validate": cmd_validate, "arms": cmd_arms, "rewards": cmd_rewards, "run": cmd_run}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = apply_overrides(load_experiment(args.config), args)
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (cfgio.ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
