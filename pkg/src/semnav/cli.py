"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_run_config
from .harness import POLICIES, ConfigError, SafetyViolation, load_suite, run_episode, trace_hash, write_trace
from .memory import CognitiveMemoryGraph, GraphError
from .metrics import compute_metrics, episodes_csv, metrics_csv, metrics_table
from .multicover import InstanceTooLarge as CoverTooLarge
from .multicover import compact
from .oracle import Instruction, MockOracle, OracleError, OracleTables, RemoteOracle
from .scene import Scene, SceneError
from .utility import build_sources, rasterize_field
from .wtrp import InstanceTooLarge, InvariantError, WtrpInstance, solve_exact, solve_heuristic

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def make_oracle(cfg: RunConfig):
    oc = cfg.oracle
    if oc.kind == "remote":
        url = oc.url or os.environ.get("ORACLE_URL")
        if not url:
            raise UsageError("remote oracle needs oracle.url or ORACLE_URL")
        timeout_ms = int(os.environ.get("ORACLE_TIMEOUT_MS", oc.timeout_ms))
        return RemoteOracle(url, timeout_ms / 1000.0)
    tables = None
    if oc.tables:
        try:
            tables = OracleTables.load(oc.tables)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot load oracle tables {oc.tables}: {exc}") from exc
    return MockOracle(tables, visibility_threshold=oc.visibility_threshold, vlm_latency=oc.latency)


def _config_from_args(args) -> RunConfig:
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags.setdefault("run", {})["seed"] = args.seed
    if getattr(args, "oracle", None) is not None:
        flags.setdefault("oracle", {})["kind"] = args.oracle
    return load_run_config(args.config, args.set or (), flags)


# --------------------------------------------------------------------------
# commands

def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    policies = args.policy.split(",") if args.policy else [cfg.run.policy]
    for p in policies:
        if p not in POLICIES:
            raise UsageError(f"unknown policy {p!r}; choose from {', '.join(POLICIES)}")
    episodes = load_suite(args.suite)
    if args.episode:
        wanted = set(args.episode)
        episodes = [e for e in episodes if e.id in wanted]
        missing = wanted - {e.id for e in episodes}
        if missing:
            raise UsageError(f"no episode(s) {', '.join(sorted(missing))} in {args.suite}")
    oracle = make_oracle(cfg)
    bundle = cfg.bundle()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plots = cfg.run.plots and not args.no_plots
    if plots:
        from .plotting import plot_policy_comparison, plot_trajectory

    named, all_results = {}, []
    for policy in policies:
        results = []
        for i, ep in enumerate(episodes):
            res = run_episode(ep, bundle, oracle, policy, cfg.run.seed + i)
            results.append(res)
            stem = f"{policy}__{ep.id}"
            write_trace(out / "traces" / f"{stem}.jsonl", res.trace)
            if plots:
                plot_trajectory(res, out / "plots" / f"{stem}.png", scene=ep.scene)
            if not args.quiet:
                print(f"{policy:12s} {ep.id:24s} {res.outcome:13s} steps={res.steps:4d} "
                      f"l_a={res.actual_length:7.2f} l_s={res.shortest_length:7.2f}", file=sys.stderr)
        named[policy] = compute_metrics(results)
        all_results.extend(results)

    (out / "metrics.csv").write_text(metrics_csv(named))
    (out / "episodes.csv").write_text(episodes_csv(all_results))
    if plots and len(named) > 1:
        plot_policy_comparison(named, out / "plots" / "policies.png")
    print(metrics_table(named), end="")
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        inst = WtrpInstance.load(args.file)
    except OSError as exc:
        raise UsageError(f"cannot read instance {args.file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"instance {args.file} is not valid JSON: {exc}") from exc
    try:
        inst.validate()
        if args.exact:
            tour = solve_exact(inst, args.exact_limit)
        elif inst.n <= args.exact_limit:
            tour = solve_exact(inst, args.exact_limit)
        else:
            tour = solve_heuristic(inst, seed=args.seed)
    except (InvariantError, InstanceTooLarge) as exc:
        raise UsageError(str(exc)) from exc
    if args.json:
        print(json.dumps({"order": list(tour.order), "cumulative_costs": [float(c) for c in tour.cumulative_costs],
                          "objective": float(tour.objective), "optimal": tour.optimal}))
        return EXIT_OK
    print("order: " + " ".join(str(k) for k in tour.order))
    for step, (k, c) in enumerate(zip(tour.order, tour.cumulative_costs), start=1):
        print(f"  C_{step} = {c:.6g}  (node {k}, weight {inst.weights[k - 1]:.6g})")
    print(f"objective: {tour.objective:.12g}")
    print(f"optimal: {'yes' if tour.optimal else 'unknown'}")
    return EXIT_OK


def _load_graph(path) -> CognitiveMemoryGraph:
    try:
        return CognitiveMemoryGraph.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read graph {path}: {exc}") from exc
    except (json.JSONDecodeError, GraphError) as exc:
        raise UsageError(f"graph {path} is invalid: {exc}") from exc


def cmd_compact(args) -> int:
    graph = _load_graph(args.graph)
    before = len(graph.anchors)
    try:
        result = compact(graph, args.r, args.exact_limit)
    except CoverTooLarge as exc:
        raise UsageError(str(exc)) from exc
    graph.save(args.out)
    print(f"anchors: {before} -> {len(graph.anchors)} (cost {result.total_cost:.6g}, "
          f"{'optimal' if result.optimal else 'greedy'})")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_dump_graph(args) -> int:
    cfg = _config_from_args(args)
    episodes = load_suite(args.suite)
    match = [e for e in episodes if e.id == args.episode] if args.episode else episodes[:1]
    if not match:
        raise UsageError(f"no episode {args.episode!r} in {args.suite}")
    ep = match[0]
    idx = episodes.index(ep)
    res = run_episode(ep, cfg.bundle(), make_oracle(cfg), args.policy or cfg.run.policy, cfg.run.seed + idx)
    res.graph.save(args.out)
    print(f"{ep.id}: {len(res.graph.anchors)} anchors, {len(res.graph.objects)} objects -> {args.out}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    from .plotting import field_to_pixels, write_pgm
    cfg = _config_from_args(args)
    graph = _load_graph(args.graph)
    if args.scene:
        try:
            scene = Scene.load(args.scene)
        except (OSError, SceneError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load scene {args.scene}: {exc}") from exc
        width, height, res = scene.width, scene.height, scene.resolution
    else:
        width, height, res = args.width, args.height, args.resolution
    if width <= 0 or height <= 0 or not res > 0:
        raise UsageError("heatmap size and resolution must be positive")
    oracle = make_oracle(cfg)
    instruction = Instruction(args.instruction)
    decomposition = None if args.no_boost else oracle.decompose(instruction)
    sources = build_sources(graph, instruction, decomposition, oracle, cfg.utility)
    field = rasterize_field(sources, width, height, res, cfg.utility.double_weight)
    vmax = args.vmax if args.vmax is not None else cfg.utility.gamma
    write_pgm(args.out, field_to_pixels(field, vmax))
    peak = np.unravel_index(int(np.argmax(field)), field.shape)
    print(f"wrote {args.out} ({width}x{height}); field max {field.max():.6g} at cell "
          f"({peak[1]}, {peak[0]})")
    return EXIT_OK


def cmd_trace(args) -> int:
    rows = []
    try:
        with open(args.file) as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
    except OSError as exc:
        raise UsageError(f"cannot read trace {args.file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"trace {args.file} is not JSONL: {exc}") from exc
    events: dict[str, int] = {}
    for r in rows:
        key = r.get("event", "tick" if "mode" in r else "other")
        events[key] = events.get(key, 0) + 1
    ticks = [r["tick"] for r in rows if "tick" in r]
    print(f"records: {len(rows)}")
    print(f"ticks: {max(ticks) + 1 if ticks else 0}")
    for key in sorted(events):
        print(f"  {key}: {events[key]}")
    print(f"hash: {trace_hash(rows)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_config_flags(p, with_seed=True):
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--oracle", choices=("mock", "remote"), help="semantic oracle backend")
    if with_seed:
        p.add_argument("--seed", type=int, help="base seed; episode i uses seed + i")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semnav", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an episode suite and write metrics, traces and plots")
    p.add_argument("--suite", required=True, help="suite JSON file")
    p.add_argument("--policy", help=f"policy or comma-separated list ({', '.join(POLICIES)})")
    p.add_argument("--episode", action="append", help="only run this episode id (repeatable)")
    p.add_argument("--out", default="runs", help="output directory (default: runs)")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    p.add_argument("--quiet", action="store_true", help="no per-episode progress lines")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve-wtrp", help="solve a standalone WTRP instance")
    p.add_argument("--file", required=True)
    p.add_argument("--exact", action="store_true", help="require the exact solver")
    p.add_argument("--exact-limit", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print the tour as JSON")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compact", help="compact a memory graph with set multicover")
    p.add_argument("--graph", required=True)
    p.add_argument("--r", type=int, default=2, help="coverage cap (default 2)")
    p.add_argument("--exact-limit", type=int, default=24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("dump-graph", help="run one episode and write its final memory graph")
    p.add_argument("--suite", required=True)
    p.add_argument("--episode", help="episode id (default: first)")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_dump_graph)

    p = sub.add_parser("heatmap", help="render the semantic field of a graph as a PGM image")
    p.add_argument("--graph", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--scene", help="take grid size and resolution from this scene")
    p.add_argument("--width", type=int, default=100)
    p.add_argument("--height", type=int, default=100)
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--vmax", type=float, help="field value mapped to white (default: gamma)")
    p.add_argument("--no-boost", action="store_true", help="disable the related-label gain")
    p.add_argument("--out", required=True)
    _add_config_flags(p, with_seed=False)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("trace", help="summarise a JSONL trace")
    p.add_argument("--file", required=True)
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OracleError, SafetyViolation, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
