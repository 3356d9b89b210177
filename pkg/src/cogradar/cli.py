"""Command-line front end.

Subcommands cover the full experiment lifecycle: generate-trajectory,
calibrate, train, evaluate, compare, and trace. Every output file is
written atomically, and all run-to-run randomness flows from --seed so
any invocation is reproducible byte for byte.

The truth trajectory is always generated from the scenario's episode
seed, not from --seed: policies evaluated under different noise seeds
still fly against the same target.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .config import ScenarioConfig, default_scenario
from .experiment import (
    DEFAULT_EVAL_RUNS,
    DEFAULT_TRAIN_RUNS,
    atomic_write_text,
    calibrate_discretizer,
    evaluate,
    overall_windowed_mse,
    run_episode,
    save_histogram_csv,
    save_metrics_csv,
    save_run_csv,
    train_qlearning,
)
from .policy import (
    BandwidthScalingPolicy,
    Discretizer,
    FixedPolicy,
    Policy,
    QLearningPolicy,
    QTable,
)
from .trajectory import generate_trajectory, save_trajectory_csv

POLICY_NAMES = ("fixed", "scaling", "qlearn", "qlearn-lookahead")
TRAINABLE_POLICY_NAMES = ("qlearn", "qlearn-lookahead")
SUMMARY_CSV_HEADER = ["policy", "n_runs", "successful_runs", "mean_windowed_min_mse"]
DEFAULT_CALIBRATE_RUNS = 100


class UsageError(Exception):
    """Bad invocation that argparse cannot catch (exit code 1)."""


@dataclass(frozen=True)
class PolicySpec:
    """One `name[:param]` item from --policy."""

    name: str
    param: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        name, _, param = text.partition(":")
        if name not in POLICY_NAMES:
            raise UsageError(
                f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}"
            )
        return cls(name=name, param=param or None)

    def __str__(self) -> str:
        return self.name if self.param is None else f"{self.name}:{self.param}"


@dataclass(frozen=True)
class RunManifest:
    """Validated invocation: what to run, from which files, with which seed."""

    command: str
    config_path: Optional[str]
    seed: Optional[int]
    out_dir: str
    policies: tuple[PolicySpec, ...] = ()
    qtable_path: Optional[str] = None
    edges_path: Optional[str] = None
    runs: Optional[int] = None
    transmissions: Optional[int] = None

    def __post_init__(self) -> None:
        for label, path in (
            ("config", self.config_path),
            ("Q-table", self.qtable_path),
            ("edges", self.edges_path),
        ):
            if path is not None and not os.path.isfile(path):
                raise FileNotFoundError(f"{label} file not found: {path}")


def _manifest(args: argparse.Namespace) -> RunManifest:
    specs: tuple[PolicySpec, ...] = ()
    policy_arg = getattr(args, "policy", None)
    if policy_arg is not None:
        specs = tuple(
            PolicySpec.parse(item) for item in policy_arg.split(",") if item
        )
        if not specs:
            raise UsageError("--policy must name at least one policy")
    return RunManifest(
        command=args.command,
        config_path=args.config,
        seed=args.seed,
        out_dir=args.out,
        policies=specs,
        qtable_path=getattr(args, "qtable", None),
        edges_path=getattr(args, "edges", None),
        runs=getattr(args, "runs", None),
        transmissions=args.transmissions,
    )


def _load_scenario(manifest: RunManifest) -> ScenarioConfig:
    scenario = (
        default_scenario()
        if manifest.config_path is None
        else ScenarioConfig.load(manifest.config_path)
    )
    if manifest.transmissions is not None:
        scenario = replace(
            scenario,
            episode=replace(scenario.episode, n_transmissions=manifest.transmissions),
        )
    return scenario


def _base_seed(manifest: RunManifest, scenario: ScenarioConfig) -> int:
    return manifest.seed if manifest.seed is not None else scenario.episode.seed


def _truth(scenario: ScenarioConfig):
    return generate_trajectory(scenario.trajectory, seed=scenario.episode.seed)


def _build_policy(
    spec: PolicySpec, scenario: ScenarioConfig, qtable_path: Optional[str]
) -> Policy:
    radar = scenario.radar
    if spec.name == "fixed":
        if spec.param is None:
            raise UsageError("fixed policy needs a bandwidth, e.g. fixed:1e6")
        try:
            bandwidth = float(spec.param)
        except ValueError:
            raise UsageError(f"fixed policy bandwidth is not a number: {spec.param!r}")
        try:
            return FixedPolicy(bandwidth, radar.min_bw, radar.max_bw)
        except ValueError as exc:
            raise UsageError(str(exc))
    if spec.name == "scaling":
        if spec.param is not None:
            raise UsageError("scaling policy takes no parameter")
        return BandwidthScalingPolicy(radar.min_bw, radar.max_bw)
    path = spec.param or qtable_path
    if path is None:
        raise UsageError(f"{spec.name} needs a Q-table: {spec.name}:PATH or --qtable PATH")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Q-table file not found: {path}")
    return QLearningPolicy(QTable.load(path), epsilon=0.0)


def _slug(spec: PolicySpec) -> str:
    if spec.param is None:
        base = spec.name
    elif spec.name in TRAINABLE_POLICY_NAMES:
        stem = os.path.splitext(os.path.basename(spec.param))[0]
        base = f"{spec.name}_{stem}"
    else:
        base = f"{spec.name}_{spec.param}"
    return re.sub(r"[^A-Za-z0-9._-]+", "_", base)


def _out_path(manifest: RunManifest, filename: str) -> str:
    os.makedirs(manifest.out_dir, exist_ok=True)
    return os.path.join(manifest.out_dir, filename)


def _cmd_generate_trajectory(manifest: RunManifest) -> int:
    scenario = _load_scenario(manifest)
    seed = _base_seed(manifest, scenario)
    trajectory = generate_trajectory(scenario.trajectory, seed=seed)
    path = _out_path(manifest, "trajectory.csv")
    save_trajectory_csv(trajectory, path)
    print(f"wrote {path} ({len(trajectory)} samples)")
    return 0


def _cmd_calibrate(manifest: RunManifest) -> int:
    scenario = _load_scenario(manifest)
    discretizer = calibrate_discretizer(
        _truth(scenario),
        scenario.radar,
        scenario.process,
        scenario.episode,
        n_runs=manifest.runs if manifest.runs is not None else DEFAULT_CALIBRATE_RUNS,
        base_seed=_base_seed(manifest, scenario),
        actions=scenario.actions,
    )
    path = _out_path(manifest, "edges.json")
    discretizer.save(path)
    print(f"wrote {path}")
    return 0


def _cmd_train(manifest: RunManifest) -> int:
    spec = manifest.policies[0] if manifest.policies else PolicySpec("qlearn")
    if len(manifest.policies) > 1 or spec.name not in TRAINABLE_POLICY_NAMES:
        raise UsageError("train expects one policy: qlearn or qlearn-lookahead")
    if spec.param is not None:
        raise UsageError("pass the warm-start table via --qtable, not in --policy")
    scenario = _load_scenario(manifest)
    trajectory = _truth(scenario)
    base_seed = _base_seed(manifest, scenario)
    if manifest.qtable_path is not None:
        table = QTable.load(manifest.qtable_path)
    else:
        if manifest.edges_path is not None:
            discretizer = Discretizer.load(manifest.edges_path)
        else:
            # self-contained default: pilot calibration on a disjoint seed stream
            discretizer = calibrate_discretizer(
                trajectory,
                scenario.radar,
                scenario.process,
                scenario.episode,
                n_runs=DEFAULT_CALIBRATE_RUNS,
                base_seed=base_seed + 1_000_000,
                actions=scenario.actions,
            )
        table = scenario.new_table(
            discretizer, lookahead=spec.name == "qlearn-lookahead"
        )
    n_runs = manifest.runs if manifest.runs is not None else DEFAULT_TRAIN_RUNS
    train_qlearning(
        trajectory,
        table,
        scenario.radar,
        scenario.process,
        scenario.episode,
        n_runs=n_runs,
        base_seed=base_seed,
    )
    path = _out_path(manifest, "qtable.json")
    table.save(path)
    print(f"wrote {path} after {n_runs} training runs")
    return 0


def _cmd_evaluate(manifest: RunManifest) -> int:
    scenario = _load_scenario(manifest)
    policy = _build_policy(manifest.policies[0], scenario, manifest.qtable_path)
    results, report = evaluate(
        _truth(scenario),
        policy,
        scenario.radar,
        scenario.process,
        scenario.episode,
        n_runs=manifest.runs if manifest.runs is not None else DEFAULT_EVAL_RUNS,
        base_seed=_base_seed(manifest, scenario),
    )
    metrics_path = _out_path(manifest, "metrics.csv")
    histogram_path = _out_path(manifest, "histogram.csv")
    save_metrics_csv(report, metrics_path)
    save_histogram_csv(report.histogram, histogram_path)
    successful = sum(1 for r in results if r.successful)
    print(f"wrote {metrics_path} and {histogram_path}")
    print(
        f"{manifest.policies[0]}: {successful}/{report.n_runs} full tracks, "
        f"windowed-min MSE {overall_windowed_mse(results):.6g} m^2"
    )
    return 0


def _cmd_compare(manifest: RunManifest) -> int:
    scenario = _load_scenario(manifest)
    trajectory = _truth(scenario)
    base_seed = _base_seed(manifest, scenario)
    n_runs = manifest.runs if manifest.runs is not None else DEFAULT_EVAL_RUNS
    slugs: dict[str, int] = {}
    rows = []
    for spec in manifest.policies:
        policy = _build_policy(spec, scenario, manifest.qtable_path)
        results, report = evaluate(
            trajectory,
            policy,
            scenario.radar,
            scenario.process,
            scenario.episode,
            n_runs=n_runs,
            base_seed=base_seed,
        )
        slug = _slug(spec)
        if slug in slugs:
            slugs[slug] += 1
            slug = f"{slug}_{slugs[slug]}"
        else:
            slugs[slug] = 0
        save_metrics_csv(report, _out_path(manifest, f"metrics_{slug}.csv"))
        successful = sum(1 for r in results if r.successful)
        rows.append((str(spec), n_runs, successful, overall_windowed_mse(results)))
    lines = [",".join(SUMMARY_CSV_HEADER)]
    lines += [f"{p},{n},{s},{mse:.17g}" for p, n, s, mse in rows]
    summary_path = _out_path(manifest, "summary.csv")
    atomic_write_text(summary_path, "\n".join(lines) + "\n")
    print(f"wrote {summary_path} and {len(rows)} per-policy metrics files")
    for p, n, s, mse in rows:
        print(f"  {p}: {s}/{n} full tracks, windowed-min MSE {mse:.6g} m^2")
    return 0


def _cmd_trace(manifest: RunManifest) -> int:
    scenario = _load_scenario(manifest)
    policy = _build_policy(manifest.policies[0], scenario, manifest.qtable_path)
    result = run_episode(
        _truth(scenario),
        policy,
        scenario.radar,
        scenario.process,
        scenario.episode,
        rng=np.random.default_rng(_base_seed(manifest, scenario)),
        learning=False,
    )
    path = _out_path(manifest, "trace.csv")
    save_run_csv(result, path)
    status = "full track" if result.successful else f"lost at step {result.lost_at}"
    print(f"wrote {path} ({len(result.records)} steps, {status})")
    return 0


_COMMANDS = {
    "generate-trajectory": _cmd_generate_trajectory,
    "calibrate": _cmd_calibrate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "trace": _cmd_trace,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="cogradar",
        description="Adaptive radar bandwidth selection against a ballistic target.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="scenario JSON (default: built-in hard scenario)")
        p.add_argument("--seed", type=int, metavar="N", help="base seed for run noise (default: scenario episode seed)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory, created if missing (default: .)")
        p.add_argument("--transmissions", type=int, metavar="N", help="override transmissions per run")

    p = sub.add_parser("generate-trajectory", help="write the truth trajectory CSV")
    common(p)

    p = sub.add_parser("calibrate", help="pilot runs -> discretizer edges JSON")
    common(p)
    p.add_argument("--runs", type=int, metavar="N", help=f"pilot runs (default: {DEFAULT_CALIBRATE_RUNS})")

    p = sub.add_parser("train", help="train a Q-table, write qtable.json")
    common(p)
    p.add_argument("--policy", metavar="NAME", default="qlearn", help="qlearn or qlearn-lookahead (default: qlearn)")
    p.add_argument("--qtable", metavar="PATH", help="warm-start from an existing table")
    p.add_argument("--edges", metavar="PATH", help="discretizer edges JSON from calibrate (default: internal pilot calibration)")
    p.add_argument("--runs", type=int, metavar="N", help=f"training episodes (default: {DEFAULT_TRAIN_RUNS})")

    p = sub.add_parser("evaluate", help="frozen-policy evaluation -> metrics.csv + histogram.csv")
    common(p)
    p.add_argument("--policy", metavar="SPEC", required=True, help="fixed:BW_HZ | scaling | qlearn[:PATH] | qlearn-lookahead[:PATH]")
    p.add_argument("--qtable", metavar="PATH", help="Q-table for qlearn policies")
    p.add_argument("--runs", type=int, metavar="N", help=f"evaluation runs (default: {DEFAULT_EVAL_RUNS})")

    p = sub.add_parser("compare", help="evaluate a comma-separated policy list on shared seeds")
    common(p)
    p.add_argument("--policy", metavar="SPECS", required=True, help="comma-separated policy specs, e.g. fixed:1e6,scaling,qlearn:qtable.json")
    p.add_argument("--qtable", metavar="PATH", help="Q-table for qlearn policies without an inline path")
    p.add_argument("--runs", type=int, metavar="N", help=f"evaluation runs per policy (default: {DEFAULT_EVAL_RUNS})")

    p = sub.add_parser("trace", help="single seeded run -> per-step trace.csv")
    common(p)
    p.add_argument("--policy", metavar="SPEC", required=True, help="policy spec, as in evaluate")
    p.add_argument("--qtable", metavar="PATH", help="Q-table for qlearn policies")

    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        manifest = _manifest(args)
        return _COMMANDS[manifest.command](manifest)
    except UsageError as exc:
        print(f"cogradar: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cogradar: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
