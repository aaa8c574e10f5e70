"""Episode loop: perception tick, memory update and the reasoning worker.

Each tick integrates an observation, may add a visual anchor to the
memory graph, hands fresh subgraph tasks to the reasoning worker and then
moves the agent, either towards a confirmed target or towards the frontier
picked by the goal selector. The worker runs on its own thread
(``reasoning="thread"``) or in lockstep with the ticks for reproducible
runs (``reasoning="lockstep"``, the default).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from .memory import CognitiveMemoryGraph, MergeConfig, ObjectNode, ViewEntry, VisualAnchor, should_select_anchor
from .multicover import compact
from .oracle import CountingOracle, Instruction
from .planner import Path, PlannerConfig, Unreachable, distance_to_mask, plan_motion, polyline_length, segment_clear, step_controller
from .reasoning import DecompositionReady, ReasoningWorker, TargetFound, decompose_graph
from .scene import Scene, SceneError
from .utility import UtilityConfig, build_sources, score_frontier
from .world import (NO_ANCHOR, OccupancyGrid, Pose, SensorSpec, extract_frontiers,
                    frontier_mask,
                    integrate_observation, line_of_sight, wrap_angle)
from .wtrp import MotionConfig, select_goal

log = logging.getLogger(__name__)

SUITE_FORMAT = "semnav-suite"
POLICIES = ("full", "greedy-goal", "no-struct", "no-vis")
OUTCOMES = ("Success", "FalsePositive", "NoFrontier", "Stepout", "NoTarget")


class ConfigError(ValueError):
    pass


class SafetyViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Episode:
    id: str
    scene: Scene
    start: Pose
    instruction: Instruction
    target_labels: tuple[str, ...]
    success_radius: float = 1.0
    max_steps: int = 200
    scene_ref: str = ""
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ConfigError(f"episode {self.id}: max_steps must be positive")
        if not self.success_radius > 0:
            raise ConfigError(f"episode {self.id}: success_radius must be positive")
        if not self.scene.is_free(self.start.position):
            raise ConfigError(f"episode {self.id}: start {self.start.position} is not collision-free")


@dataclass(frozen=True)
class HarnessConfig:
    reasoning: str = "lockstep"  # or "thread"
    reasoning_per_tick: int = 1
    dt: float = 1.0
    compact_threshold: int = 64
    cover_r: int = 2
    multicover_exact_limit: int = 24
    wtrp_exact_limit: int = 12
    max_candidates: int = 12
    min_frontier_cells: int = 3
    stop_margin: float = 0.25
    point_jitter: float = 0.02
    goal_hold_ticks: int = 10
    replan_every_tick: bool = False
    drain_timeout: float = 60.0

    def __post_init__(self):
        if self.reasoning not in ("lockstep", "thread"):
            raise ConfigError(f"reasoning must be 'lockstep' or 'thread', got {self.reasoning!r}")
        if self.reasoning_per_tick < 1 or self.compact_threshold < 1 or self.max_candidates < 1:
            raise ConfigError("reasoning_per_tick, compact_threshold and max_candidates must be >= 1")
        if self.cover_r < 1:
            raise ConfigError("cover_r must be >= 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.stop_margin < 0 or self.point_jitter < 0:
            raise ConfigError("stop_margin and point_jitter must be non-negative")


@dataclass(frozen=True)
class Bundle:
    """Every module config needed to run an episode."""
    merge: MergeConfig = MergeConfig()
    utility: UtilityConfig = UtilityConfig()
    motion: MotionConfig = MotionConfig()
    planner: PlannerConfig = PlannerConfig()
    sensor: SensorSpec = SensorSpec()
    harness: HarnessConfig = HarnessConfig()


@dataclass
class EpisodeResult:
    episode_id: str
    policy: str
    success: bool
    outcome: str
    actual_length: float
    shortest_length: float
    steps: int
    steps_to_discovery: int
    trace: list[dict] = field(default_factory=list)
    trajectory: list[tuple[float, float]] = field(default_factory=list)
    oracle_counts: dict = field(default_factory=dict)
    tick_times: list[float] = field(default_factory=list)
    loop_time: float = 0.0  # wall seconds in the tick loop, worker teardown excluded
    final_frontiers: list[tuple[float, float, float]] = field(default_factory=list)
    grid: OccupancyGrid | None = None
    graph: CognitiveMemoryGraph | None = None

    def __post_init__(self):
        if self.actual_length < 0:
            raise ValueError("actual_length must be non-negative")
        if self.success and self.outcome != "Success":
            raise ValueError("a successful episode must have outcome Success")

    def summary(self) -> dict:
        return {
            "episode": self.episode_id, "policy": self.policy, "success": int(self.success),
            "outcome": self.outcome, "actual_length": round(self.actual_length, 6),
            "shortest_length": None if math.isinf(self.shortest_length) else round(self.shortest_length, 6),
            "steps": self.steps, "steps_to_discovery": self.steps_to_discovery,
        }


def policy_settings(policy: str, utility: UtilityConfig) -> tuple[UtilityConfig, bool]:
    """Utility config and greedy flag for an ablation variant."""
    if policy == "full":
        return utility, False
    if policy == "greedy-goal":
        return utility, True
    if policy == "no-struct":
        return replace(utility, lambda_struct=0.0), False
    if policy == "no-vis":
        return replace(utility, lambda_vis=0.0), False
    raise ConfigError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")


# --------------------------------------------------------------------------
# perception helpers

def detect_objects(scene: Scene, position, max_range: float) -> list:
    """Scene objects whose centre is within range and in line of sight."""
    out = []
    for obj in scene.objects:
        d = math.hypot(obj.position[0] - position[0], obj.position[1] - position[1])
        if d <= max_range and line_of_sight(scene.occupied, position, obj.position, scene.resolution):
            out.append(obj)
    return out


def object_points(obj, rng: np.random.Generator, jitter: float) -> np.ndarray:
    x0, y0, x1, y1 = obj.box()
    xs, ys, zs = np.linspace(x0, x1, 3), np.linspace(y0, y1, 3), np.array([0.0, obj.height])
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    if jitter:
        pts = pts + rng.normal(0.0, jitter, pts.shape)
    return pts


def view_entries(pose: Pose, objects) -> tuple[ViewEntry, ...]:
    entries = []
    for obj in objects:
        dx, dy = obj.position[0] - pose.x, obj.position[1] - pose.y
        entries.append(ViewEntry(obj.label, wrap_angle(math.atan2(dy, dx) - pose.heading), math.hypot(dx, dy)))
    return tuple(sorted(entries, key=lambda e: (e.distance, e.label)))


def shortest_length(scene: Scene, start, target_labels, success_radius: float) -> float:
    """Grid A* distance (metres) from the start cell to any free cell within reach of a target."""
    targets = scene.objects_with_label(target_labels)
    if not targets:
        return math.inf
    res = scene.resolution
    passable = ~scene.occupied
    xs = (np.arange(scene.width) + 0.5) * res
    ys = (np.arange(scene.height) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    goal = np.zeros_like(passable)
    for t in targets:
        x0, y0, x1, y1 = t.box()
        dx = np.maximum(np.maximum(x0 - gx, 0.0), gx - x1)
        dy = np.maximum(np.maximum(y0 - gy, 0.0), gy - y1)
        goal |= np.hypot(dx, dy) <= success_radius
    goal &= passable
    start_cell = (int(start[0] // res), int(start[1] // res))
    return distance_to_mask(passable, start_cell, goal) * res


def trace_hash(trace: list[dict]) -> str:
    """SHA-256 of the trace with wall-clock fields removed."""
    h = hashlib.sha256()
    for row in trace:
        clean = {k: v for k, v in row.items() if k != "latency_ms"}
        h.update(json.dumps(clean, sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()


def write_trace(path, trace: list[dict]) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _r(v: float) -> float:
    return round(float(v), 6)


# --------------------------------------------------------------------------
# episode loop

def run_episode(episode: Episode, bundle: Bundle, oracle, policy: str = "full", seed: int = 0) -> EpisodeResult:
    hcfg = bundle.harness
    ucfg, greedy = policy_settings(policy, bundle.utility)
    scene = episode.scene
    truth = scene.occupied
    rng = np.random.default_rng(seed)
    counter = CountingOracle(oracle)
    instruction = episode.instruction

    grid = OccupancyGrid(scene.width, scene.height, scene.resolution)
    graph = CognitiveMemoryGraph()
    archive: dict[int, VisualAnchor] = {}
    trace: list[dict] = []
    worker = ReasoningWorker(counter, instruction)
    worker.request_decomposition()
    threaded = hcfg.reasoning == "thread"
    if threaded:
        worker.start()

    agent = episode.start
    trajectory = [agent.position]
    l_a = 0.0
    last_anchor_pose = None
    current_anchor = NO_ANCHOR
    next_anchor = 0
    submitted_version = -1
    decomposition = None
    found: TargetFound | None = None
    discovery = episode.max_steps
    blacklist: set[tuple[int, int]] = set()
    embeddings: dict[str, np.ndarray] = {}
    path, path_goal, path_index = None, None, 0
    commit, commit_tick = None, 0
    outcome = None
    final_frontiers: list[tuple[float, float, float]] = []
    tick_times: list[float] = []
    live_tasks: dict = {}
    events_seen = 0
    steps = 0

    def log_worker_events(tick):
        nonlocal events_seen
        n = len(worker.events)
        for ev in worker.events[events_seen:n]:
            trace.append({"tick": tick, **ev})
        events_seen = n

    def handle(ev, tick):
        nonlocal decomposition, found, discovery, outcome
        if isinstance(ev, DecompositionReady):
            decomposition = ev.decomposition
            if ev.decomposition is None:
                outcome = "NoTarget"
        elif isinstance(ev, TargetFound) and found is None:
            found = ev
            discovery = tick + 1
            trace.append({"tick": tick, "event": "target_found", "anchor": ev.anchor_id,
                          "object": ev.object_id, "goal": [_r(ev.centroid[0]), _r(ev.centroid[1])]})

    def evaluate_stop() -> str:
        for obj in scene.objects_with_label(episode.target_labels):
            if obj.distance_to(agent.position) <= episode.success_radius:
                return "Success"
        return "FalsePositive"

    loop_start = time.perf_counter()
    try:
        for tick in range(episode.max_steps):
            t0 = time.perf_counter()
            steps = tick + 1

            # perception and memory
            seen = detect_objects(scene, agent.position, bundle.sensor.depth_range)
            labels = [o.label for o in seen]
            if should_select_anchor(agent, last_anchor_pose, labels, graph.known_labels(), bundle.merge):
                in_view = detect_objects(scene, agent.position, bundle.sensor.image_range)
                anchor = VisualAnchor(next_anchor, agent, view_entries(agent, in_view), tick)
                nodes = []
                for obj in seen:
                    if obj.label not in embeddings:
                        embeddings[obj.label] = counter.embed(obj.label)
                    nodes.append(ObjectNode(-1, obj.label, object_points(obj, rng, hcfg.point_jitter),
                                            embeddings[obj.label]))
                graph.insert_anchor(anchor, nodes, bundle.merge)
                archive[anchor.id] = anchor
                current_anchor, last_anchor_pose = anchor.id, agent
                next_anchor += 1
            integrate_observation(grid, agent, bundle.sensor, truth, current_anchor)

            for ev in worker.drain_results():
                handle(ev, tick)
            if outcome is not None:
                break
            if len(graph.anchors) > hcfg.compact_threshold:
                compact(graph, hcfg.cover_r, hcfg.multicover_exact_limit)
            if decomposition is not None and found is None and graph.version != submitted_version:
                snap = graph.snapshot()
                tasks = decompose_graph(snap, decomposition, counter, instruction, worker.done_keys(),
                                        live_tasks)
                live_tasks = {t.key: t for t in tasks}
                worker.submit(tasks, snap.version)
                submitted_version = graph.version

            if not threaded:
                worker.run_pending(hcfg.reasoning_per_tick)
            for ev in worker.drain_results():
                handle(ev, tick)
            log_worker_events(tick)
            if outcome is not None:
                break

            # goal arbitration
            mode, goal, n_frontiers = "explore", None, 0
            if found is not None:
                stop_dist = max(episode.success_radius - hcfg.stop_margin, 0.5 * episode.success_radius)
                d = agent.distance_to(found.centroid)
                arrived = path is not None and path_goal == found.centroid and path_index >= len(path.waypoints)
                if d <= stop_dist or arrived:
                    outcome = evaluate_stop()
                    trace.append({"tick": tick, "event": "stop", "outcome": outcome,
                                  "x": _r(agent.x), "y": _r(agent.y)})
                    tick_times.append(time.perf_counter() - t0)
                    break
                if path is None or path_goal != found.centroid or hcfg.replan_every_tick:
                    try:
                        pcfg = replace(bundle.planner, snap_radius=max(bundle.planner.snap_radius, stop_dist))
                        path, path_goal, path_index = _plan_from(grid, agent, found.centroid, pcfg), found.centroid, 0
                        mode, goal = "approach", found.centroid
                    except Unreachable:
                        path = None
                        if d <= episode.success_radius:
                            outcome = evaluate_stop()
                            trace.append({"tick": tick, "event": "stop", "outcome": outcome,
                                          "x": _r(agent.x), "y": _r(agent.y)})
                            tick_times.append(time.perf_counter() - t0)
                            break
                else:
                    mode, goal = "approach", found.centroid

            if mode == "explore":
                if commit is not None and (path is None or hcfg.replan_every_tick
                                           or tick - commit_tick >= hcfg.goal_hold_ticks
                                           or not frontier_alive(grid, commit)):
                    commit = None
                if commit is None:
                    selection = _choose_frontier(grid, agent, graph, archive, counter, instruction,
                                                 decomposition, ucfg, greedy, bundle, blacklist, seed)
                    if selection is None:
                        # nothing left to explore: let pending reasoning finish first
                        if threaded:
                            deadline = time.perf_counter() + hcfg.drain_timeout
                            while not worker.idle() and time.perf_counter() < deadline:
                                time.sleep(0.005)
                        else:
                            worker.run_pending(None)
                        for ev in worker.drain_results():
                            handle(ev, tick)
                        log_worker_events(tick)
                        tick_times.append(time.perf_counter() - t0)
                        if found is None:
                            outcome = outcome or "NoFrontier"
                            break
                        continue
                    frontiers, scores, path, commit = selection
                    commit_tick, path_index = tick, 0
                    path_goal = commit.viewpoint.position
                    n_frontiers = len(frontiers)
                    final_frontiers = [(f.centroid[0], f.centroid[1], s) for f, s in zip(frontiers, scores)]
                goal = commit.viewpoint.position
            else:
                commit = None

            # control
            prev = agent
            step = step_controller(agent, path, bundle.motion, grid, path_index, hcfg.dt, bundle.planner)
            agent = step.pose
            cell = grid.cell_of(agent.position)
            if truth[cell[1], cell[0]]:
                raise SafetyViolation(f"agent entered occupied cell {cell} at tick {tick}")
            l_a += math.hypot(agent.x - prev.x, agent.y - prev.y)
            path_index = step.index
            if step.blocked or (step.arrived and mode == "explore"):
                path, path_goal = None, None
            trajectory.append(agent.position)
            trace.append({"tick": tick, "mode": mode, "x": _r(agent.x), "y": _r(agent.y),
                          "heading": _r(agent.heading), "v": _r(step.v), "omega": _r(step.omega),
                          "goal": None if goal is None else [_r(goal[0]), _r(goal[1])],
                          "frontiers": n_frontiers, "anchors": len(graph.anchors),
                          "objects": len(graph.objects), "l_a": _r(l_a)})
            tick_times.append(time.perf_counter() - t0)
        else:
            outcome = "Stepout"
    finally:
        loop_time = time.perf_counter() - loop_start
        if threaded:
            worker.stop()
        log_worker_events(steps)

    l_s = shortest_length(scene, episode.start.position, episode.target_labels, episode.success_radius)
    return EpisodeResult(
        episode_id=episode.id, policy=policy, success=outcome == "Success", outcome=outcome,
        actual_length=l_a, shortest_length=l_s, steps=steps, steps_to_discovery=discovery,
        trace=trace, trajectory=trajectory, oracle_counts=dict(counter.counts), tick_times=tick_times,
        loop_time=loop_time, final_frontiers=final_frontiers, grid=grid, graph=graph,
    )


def _plan_from(grid: OccupancyGrid, agent: Pose, goal, pcfg: PlannerConfig):
    """Plan from the agent's current point rather than its cell centre."""
    path = plan_motion(grid, agent.position, goal, pcfg)
    if path.direct:
        return path
    wps = list(path.waypoints)
    if len(wps) >= 2 and segment_clear(grid, agent.position, wps[1]):
        wps[0] = agent.position
    else:
        wps.insert(0, agent.position)
    return Path(tuple(wps), polyline_length(wps))


def frontier_alive(grid: OccupancyGrid, frontier, radius: float = 1.0) -> bool:
    """The committed frontier still has frontier cells on or near it."""
    mask = frontier_mask(grid.cells)
    cells = np.asarray(frontier.cells)
    if mask[cells[:, 1], cells[:, 0]].any():
        return True
    res = grid.resolution
    cx, cy = grid.cell_of(frontier.centroid)
    r = int(math.ceil(radius / res))
    y0, x0 = max(cy - r, 0), max(cx - r, 0)
    ys, xs = np.nonzero(mask[y0:cy + r + 1, x0:cx + r + 1])
    if len(xs) == 0:
        return False
    d2 = ((xs + x0 + 0.5) * res - frontier.centroid[0]) ** 2 + ((ys + y0 + 0.5) * res - frontier.centroid[1]) ** 2
    return bool((d2 <= radius ** 2).any())


def _choose_frontier(grid, agent, graph, archive, oracle, instruction, decomposition, ucfg, greedy,
                     bundle, blacklist, seed):
    """Score frontiers, pick the mid-term goal and plan to it.

    Returns ``(frontiers, scores, path, chosen)`` or None when no
    reachable frontier is left. Unreachable viewpoints are blacklisted.
    """
    hcfg = bundle.harness
    res = grid.resolution
    frontiers = [f for f in extract_frontiers(grid, h_max=bundle.motion.h_max)
                 if f.size >= hcfg.min_frontier_cells and grid.cell_of(f.viewpoint.position) not in blacklist]
    if not frontiers:
        return None
    sources = build_sources(graph, instruction, decomposition, oracle, ucfg) if ucfg.lambda_struct else []
    scores = [score_frontier(f, sources, oracle, instruction, archive, ucfg) for f in frontiers]
    ranked = sorted(range(len(frontiers)), key=lambda i: -scores[i])[:hcfg.max_candidates]
    ranked.sort()
    cands = [frontiers[i] for i in ranked]
    cand_scores = [scores[i] for i in ranked]
    while cands:
        sel = select_goal(agent, cands, cand_scores, bundle.motion, hcfg.wtrp_exact_limit, greedy, seed)
        f = cands[sel.index]
        vp = f.viewpoint.position
        vcell = grid.cell_of(vp)
        if agent.distance_to(vp) < 0.5 * res:
            # standing on the viewpoint and the frontier is still there: nothing more to see
            blacklist.add(vcell)
        else:
            try:
                return frontiers, scores, _plan_from(grid, agent, vp, bundle.planner), f
            except Unreachable:
                blacklist.add(vcell)
        del cands[sel.index]
        del cand_scores[sel.index]
    return None


def score_initial_frontiers(episode: Episode, bundle: Bundle, oracle, policy: str = "full", seed: int = 0):
    """Frontiers visible from the start pose and their scores under ``policy``.

    Runs the first tick's perception (one anchor, one observation) and
    scores every frontier of at least ``min_frontier_cells`` cells, with the
    instruction decomposed synchronously.
    """
    ucfg, _ = policy_settings(policy, bundle.utility)
    scene, agent = episode.scene, episode.start
    rng = np.random.default_rng(seed)
    grid = OccupancyGrid(scene.width, scene.height, scene.resolution)
    graph = CognitiveMemoryGraph()
    in_view = detect_objects(scene, agent.position, bundle.sensor.image_range)
    anchor = VisualAnchor(0, agent, view_entries(agent, in_view), 0)
    nodes = [ObjectNode(-1, o.label, object_points(o, rng, bundle.harness.point_jitter), oracle.embed(o.label))
             for o in detect_objects(scene, agent.position, bundle.sensor.depth_range)]
    graph.insert_anchor(anchor, nodes, bundle.merge)
    integrate_observation(grid, agent, bundle.sensor, scene.occupied, anchor.id)
    decomposition = oracle.decompose(episode.instruction)
    frontiers = [f for f in extract_frontiers(grid, h_max=bundle.motion.h_max)
                 if f.size >= bundle.harness.min_frontier_cells]
    sources = build_sources(graph, episode.instruction, decomposition, oracle, ucfg) if ucfg.lambda_struct else []
    scores = [score_frontier(f, sources, oracle, episode.instruction, {0: anchor}, ucfg) for f in frontiers]
    return frontiers, scores


# --------------------------------------------------------------------------
# suites

def load_suite(path) -> list[Episode]:
    """Read a suite file; scene paths resolve relative to the suite file."""
    path = FsPath(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"suite {path} is not valid JSON: {exc}") from exc
    if data.get("format") != SUITE_FORMAT:
        raise ConfigError(f"{path}: not a {SUITE_FORMAT} document")
    scenes: dict[str, Scene] = {}
    episodes = []
    for i, item in enumerate(data.get("episodes", [])):
        try:
            ref = item["scene"]
            if ref not in scenes:
                scenes[ref] = Scene.load(path.parent / ref)
            start = item["start"]
            episodes.append(Episode(
                id=str(item.get("id", f"ep{i:03d}")), scene=scenes[ref],
                start=Pose((start[0], start[1]), start[2] if len(start) > 2 else 0.0),
                instruction=Instruction(item["instruction"]),
                target_labels=tuple(item["targets"]),
                success_radius=float(item.get("success_radius", 1.0)),
                max_steps=int(item.get("max_steps", 200)),
                scene_ref=ref, tags=tuple(item.get("tags", ())),
            ))
        except SceneError as exc:
            raise ConfigError(f"{path}: episode {i}: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: episode {i}: malformed entry ({exc})") from exc
    if not episodes:
        raise ConfigError(f"{path}: suite has no episodes")
    return episodes


def suite_to_dict(episodes: list[Episode]) -> dict:
    return {"format": SUITE_FORMAT, "version": 1, "episodes": [
        {"id": e.id, "scene": e.scene_ref, "start": [e.start.x, e.start.y, e.start.heading],
         "instruction": e.instruction.text, "targets": list(e.target_labels),
         "success_radius": e.success_radius, "max_steps": e.max_steps, "tags": list(e.tags)}
        for e in episodes]}


def run_suite(episodes: list[Episode], bundle: Bundle, oracle, policy: str = "full", seed: int = 0):
    """Run every episode with per-episode seeds derived from ``seed``."""
    from .metrics import compute_metrics
    policy_settings(policy, bundle.utility)
    results = [run_episode(ep, bundle, oracle, policy, seed + i) for i, ep in enumerate(episodes)]
    return compute_metrics(results), results
