"""Operator commands: train, evaluate, sweep, serve, inspect-qtable.

Every output directory gets a manifest.json (written before any results)
recording the command, the scenario hash, seeds, and the tool version, which
is enough to reproduce the directory bit for bit. Exit codes: 0 success,
2 config error, 3 runtime error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .bridge import BridgeServer
from .engine import evaluate, sweep_users, train
from .errors import KdnsimError, ScenarioError
from .qlearning import load_qtable, save_qtable
from .scenario import Policy, Scenario, parse_scenario_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

DEFAULT_UE_COUNTS = [20, 60, 100, 140, 180, 220, 260, 300]
DEFAULT_SEEDS = [0, 1, 2, 3, 4]

log = logging.getLogger("kdnsim")


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_scenario(path: str | None) -> tuple[Scenario, str, str]:
    """Returns (scenario, source text, source path label)."""
    if path is None:
        return Scenario(), "", "<defaults>"
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario '{path}': {exc}") from None
    return parse_scenario_text(text), text, str(path)


def _write_manifest(out_dir: Path, command: str, scenario_path: str,
                    scenario_text: str, seeds: list[int],
                    ue_counts: list[int] | None = None) -> None:
    manifest = {
        "command": command,
        "scenario": scenario_path,
        "scenario_sha256": hashlib.sha256(scenario_text.encode("utf-8")).hexdigest(),
        "seeds": seeds,
        "out_dir": str(out_dir),
        "tool_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if ue_counts is not None:
        manifest["ue_counts"] = ue_counts
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write_probe"
    probe.write_text("")  # fail fast before any compute
    probe.unlink()
    return out_dir


def cmd_train(args) -> int:
    scenario, text, src = _load_scenario(args.scenario)
    if args.episodes_override is not None:
        scenario = scenario.with_overrides(
            hp=replace(scenario.hp, episodes=args.episodes_override))
    out_dir = _prepare_out(args.out)
    _write_manifest(out_dir, "train", src, text, [scenario.seed])

    def progress(point):
        if not args.quiet:
            print(f"episode {point.episode:3d}  epsilon {point.epsilon:.4f}  "
                  f"reward {point.cumulative_reward:.2f}")

    q, curve = train(scenario, on_episode=progress)
    save_qtable(q, out_dir / "qtable.kdnq", scenario.bins, scenario.hp)
    with open(out_dir / "curve.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("episode,epsilon,cumulative_reward\n")
        for p in curve:
            fh.write(f"{p.episode},{_fmt(p.epsilon)},{_fmt(p.cumulative_reward)}\n")
    if not args.quiet:
        print(f"wrote {out_dir / 'qtable.kdnq'} and {out_dir / 'curve.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scenario, text, src = _load_scenario(args.scenario)
    out_dir = _prepare_out(args.out)
    _write_manifest(out_dir, "evaluate", src, text, [scenario.seed])
    q = None
    if scenario.policy is Policy.RL:
        if args.qtable is None:
            raise ScenarioError("evaluating the rl policy needs --qtable")
        q, _ = load_qtable(args.qtable, bins=scenario.bins)
    result = evaluate(scenario, q)
    with open(out_dir / "evaluate.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("policy,mean_throughput_gbps,mean_latency_ms,mean_packet_loss,"
                 "cumulative_reward,handover_count,power_change_count\n")
        fh.write(",".join([
            scenario.policy.value,
            _fmt(result.mean_throughput_bps / 1e9),
            _fmt(result.mean_latency_ms),
            _fmt(result.mean_packet_loss),
            _fmt(result.cumulative_reward),
            str(result.handover_count),
            str(result.power_change_count),
        ]) + "\n")
    with open(out_dir / "eval_ticks.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("tick,throughput_gbps,latency_ms,packet_loss,reward\n")
        for t in range(len(result.rewards)):
            fh.write(f"{t},{_fmt(result.throughput_bps[t] / 1e9)},"
                     f"{_fmt(result.latency_ms[t])},{_fmt(result.packet_loss[t])},"
                     f"{_fmt(result.rewards[t])}\n")
    if not args.quiet:
        print(f"{scenario.policy.value}: throughput "
              f"{result.mean_throughput_bps / 1e9:.3f} Gbps, latency "
              f"{result.mean_latency_ms:.2f} ms, loss {result.mean_packet_loss:.4f}")
    return EXIT_OK


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ScenarioError(f"{flag} must be a comma-separated integer list") from None
    if not values:
        raise ScenarioError(f"{flag} must be non-empty")
    return values


def cmd_sweep(args) -> int:
    scenario, text, src = _load_scenario(args.scenario)
    if args.episodes_override is not None:
        scenario = scenario.with_overrides(
            hp=replace(scenario.hp, episodes=args.episodes_override))
    ue_counts = (_parse_int_list(args.ue_counts, "--ue-counts")
                 if args.ue_counts else list(DEFAULT_UE_COUNTS))
    seeds = (_parse_int_list(args.seeds, "--seeds")
             if args.seeds else list(DEFAULT_SEEDS))
    out_dir = _prepare_out(args.out)
    _write_manifest(out_dir, "sweep", src, text, seeds, ue_counts)

    def progress(n, policy, seed):
        if not args.quiet:
            print(f"running ue_count={n} policy={policy} seed={seed}", flush=True)

    rows = sweep_users(scenario, ue_counts, seeds, on_run=progress)

    with open(out_dir / "sweep.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ue_count,policy,kpi,mean,stddev,n\n")
        for row in rows:
            for kpi, mean, std in (
                ("throughput_gbps", row.throughput_bps_mean / 1e9, row.throughput_bps_std / 1e9),
                ("latency_ms", row.latency_ms_mean, row.latency_ms_std),
                ("packet_loss", row.packet_loss_mean, row.packet_loss_std),
            ):
                fh.write(f"{row.ue_count},{row.policy},{kpi},{_fmt(mean)},"
                         f"{_fmt(std)},{row.n_seeds}\n")

    by_key = {(r.ue_count, r.policy): r for r in rows}
    plots = [
        ("plot_throughput.csv", "throughput_gbps",
         lambda r: (r.throughput_bps_mean / 1e9, r.throughput_bps_std / 1e9)),
        ("plot_latency.csv", "latency_ms",
         lambda r: (r.latency_ms_mean, r.latency_ms_std)),
        ("plot_packet_loss.csv", "packet_loss",
         lambda r: (r.packet_loss_mean, r.packet_loss_std)),
    ]
    for filename, kpi, getter in plots:
        with open(out_dir / filename, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"ue_count,rl_{kpi}_mean,rl_{kpi}_stddev,"
                     f"idle_{kpi}_mean,idle_{kpi}_stddev\n")
            for n in ue_counts:
                rl_mean, rl_std = getter(by_key[(n, "rl")])
                idle_mean, idle_std = getter(by_key[(n, "idle")])
                fh.write(f"{n},{_fmt(rl_mean)},{_fmt(rl_std)},"
                         f"{_fmt(idle_mean)},{_fmt(idle_std)}\n")
    if not args.quiet:
        print(f"wrote sweep.csv and 3 plot files to {out_dir}")
    return EXIT_OK


def cmd_serve(args) -> int:
    scenario, _, _ = _load_scenario(args.scenario)
    server = BridgeServer(scenario, args.port)
    print(f"listening on port {server.port}", flush=True)
    try:
        server.serve_once()
    finally:
        server.close()
    if not args.quiet:
        print("session closed")
    return EXIT_OK


def cmd_inspect_qtable(args) -> int:
    q, header = load_qtable(args.qtable)
    print(f"states           {header['states']}")
    print(f"actions          {header['actions']}")
    print(f"feature order    {', '.join(header['feature_order'])}")
    for name, bounds in header["bins"].items():
        print(f"bins.{name:<15} {bounds}")
    print(f"hyperparams      {header['hyperparams']}")
    visited = int((q.visit_counts > 0).sum())
    print(f"visited cells    {visited} / {q.states * q.actions}")
    print(f"total visits     {int(q.visit_counts.sum())}")
    print(f"value range      [{q.values.min():.4f}, {q.values.max():.4f}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdnsim",
        description="Small-cell network simulator with a Q-learning knowledge plane.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a Q-table on a scenario")
    p_train.add_argument("--scenario", help="scenario TOML (defaults when omitted)")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--episodes-override", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="greedy evaluation episode")
    p_eval.add_argument("--scenario")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--qtable", help="trained table (required for policy = rl)")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="RL vs Idle KPI sweep over user counts")
    p_sweep.add_argument("--scenario")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--ue-counts", help="comma list, default 20..300 step 40")
    p_sweep.add_argument("--seeds", help="comma list, default 0,1,2,3,4")
    p_sweep.add_argument("--episodes-override", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_serve = sub.add_parser("serve", help="expose the simulator over TCP")
    p_serve.add_argument("--scenario")
    p_serve.add_argument("--port", type=int, default=0,
                         help="TCP port; 0 prints an OS-assigned port")
    p_serve.set_defaults(func=cmd_serve)

    p_inspect = sub.add_parser("inspect-qtable", help="print a table's header and stats")
    p_inspect.add_argument("--qtable", required=True)
    p_inspect.set_defaults(func=cmd_inspect_qtable)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("KDNSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KdnsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
