"""Prioritised subgraph decomposition and the background reasoning worker."""

from __future__ import annotations

import enum
import hashlib
import logging
import queue
import threading
import time
from dataclasses import dataclass

from .memory import CognitiveMemoryGraph
from .oracle import (Instruction, InstructionDecomposition, NoTarget, OracleError, ReasoningVerdict,
                     RetryableOracleError)

log = logging.getLogger(__name__)


class TaskKind(enum.IntEnum):
    TARGET_SEEDED = 0
    RELATED_SEEDED = 1
    RESIDUAL = 2


@dataclass(frozen=True)
class SubgraphTask:
    subgraph: CognitiveMemoryGraph
    priority: float
    kind: TaskKind
    graph_version: int
    key: str
    seed_object: int | None = None

    @property
    def anchor_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.subgraph.anchors))


@dataclass(frozen=True)
class TargetFound:
    anchor_id: int
    object_id: int | None
    centroid: tuple[float, float]
    verdict: ReasoningVerdict
    graph_version: int


@dataclass(frozen=True)
class DecompositionReady:
    decomposition: InstructionDecomposition | None
    error: str | None = None


@dataclass(frozen=True)
class Exhausted:
    graph_version: int
    oracle_calls: int


def content_key(graph: CognitiveMemoryGraph, anchor_ids) -> str:
    """Hash of the sorted anchor ids and the object ids each one observes."""
    rows = [(int(a), sorted(int(o) for o in graph.objects_of(a))) for a in sorted(anchor_ids)]
    return hashlib.sha1(repr(rows).encode()).hexdigest()


def decompose_graph(graph: CognitiveMemoryGraph, decomposition: InstructionDecomposition,
                    oracle, instruction: Instruction, skip_keys=frozenset(),
                    reuse=None) -> list[SubgraphTask]:
    """Split a graph snapshot into reasoning tasks, highest priority first.

    Order: target-seeded tasks, then related-seeded, then one residual task
    per anchor not covered by a seeded task. Within each kind tasks are
    sorted by descending priority (sum of object-instruction similarity),
    ties by ascending smallest anchor id. Seeded tasks with identical
    content are emitted once. Keys in ``skip_keys`` (already answered) are
    dropped before their subgraph is built. ``reuse`` maps keys to tasks
    from an earlier call; a match is emitted as is instead of rebuilt, so a
    backlog of unanswered tasks costs the same per tick as an empty one.
    """
    reuse = reuse or {}
    if not graph.anchors:
        return []
    sim_cache: dict[int, float] = {}

    def priority(sub: CognitiveMemoryGraph) -> float:
        total = 0.0
        for oid in sorted(sub.objects):
            if oid not in sim_cache:
                sim_cache[oid] = oracle.similarity(graph.objects[oid].label, instruction)
            total += sim_cache[oid]
        return total

    seen_keys: set[str] = set()
    covered: set[int] = set()
    groups: dict[TaskKind, list[SubgraphTask]] = {k: [] for k in TaskKind}

    for kind, labels in ((TaskKind.TARGET_SEEDED, decomposition.targets),
                         (TaskKind.RELATED_SEEDED, decomposition.related)):
        for oid in sorted(graph.objects):
            if graph.objects[oid].label not in labels:
                continue
            anchors = graph.anchors_of(oid)
            if not anchors:
                continue
            key = content_key(graph, anchors)
            covered.update(anchors)
            if key in seen_keys or key in skip_keys:
                continue
            seen_keys.add(key)
            old = reuse.get(key)
            if old is not None and old.kind == kind:
                groups[kind].append(old)
                continue
            sub = graph.subgraph_of_anchors(anchors)
            groups[kind].append(SubgraphTask(sub, priority(sub), kind, graph.version, key, oid))

    for aid in sorted(graph.anchors):
        if aid in covered:
            continue
        key = content_key(graph, [aid])
        if key in seen_keys or key in skip_keys:
            continue
        seen_keys.add(key)
        old = reuse.get(key)
        if old is not None and old.kind == TaskKind.RESIDUAL:
            groups[TaskKind.RESIDUAL].append(old)
            continue
        sub = graph.subgraph_of_anchors([aid])
        groups[TaskKind.RESIDUAL].append(SubgraphTask(sub, priority(sub), TaskKind.RESIDUAL,
                                                      graph.version, key))

    ordered = []
    for kind in TaskKind:
        ordered.extend(sorted(groups[kind], key=lambda t: (-t.priority, t.anchor_ids[0])))
    return ordered


class ReasoningWorker:
    """Consumes subgraph tasks and reports the first positive verdict.

    Runs either on its own thread (``start``/``stop``) or in lockstep via
    ``run_pending``; both paths share ``step``. ``submit`` never blocks on
    the oracle: it only swaps the pending list under a short lock.
    """

    def __init__(self, oracle, instruction: Instruction, max_retries: int = 3,
                 backoff: float = 0.05, maxsize: int = 512, max_requeues: int = 1, event_log=None):
        self.oracle = oracle
        self.instruction = instruction
        self.max_retries = max_retries
        self.backoff = backoff
        self.maxsize = maxsize
        self.max_requeues = max_requeues
        self.events: list[dict] = [] if event_log is None else event_log
        self.results: queue.Queue = queue.Queue()
        self.oracle_calls = 0
        self.dedup_skips = 0
        self.found = False
        self._pending: list[tuple[SubgraphTask, int]] = []
        self._done_keys: set[str] = set()
        self._live_keys: set[str] = set()
        self._latest_version = -1
        self._processed_since_notice = 0
        self._cond = threading.Condition()
        self._stop = False
        self._thread: threading.Thread | None = None
        self._busy = False
        self._want_decomposition = False
        self.decomposition: InstructionDecomposition | None = None
        self.decomposition_error: str | None = None

    # -- producer side -------------------------------------------------------

    def submit(self, tasks: list[SubgraphTask], graph_version: int) -> None:
        with self._cond:
            if self.found or graph_version < self._latest_version:
                return
            self._latest_version = graph_version
            self._live_keys = {t.key for t in tasks}
            fresh = [t for t in tasks if t.key not in self._done_keys]
            self.dedup_skips += len(tasks) - len(fresh)
            self._pending = [(t, 0) for t in fresh[: self.maxsize]]
            self._cond.notify()

    def request_decomposition(self) -> None:
        """Ask the worker to decompose the instruction before any subgraph task."""
        with self._cond:
            self._want_decomposition = True
            self._cond.notify()

    def done_keys(self) -> frozenset:
        """Keys already answered. A task finishing right after this read is
        at worst judged stale and asked again."""
        with self._cond:
            return frozenset(self._done_keys)

    def pending(self) -> int:
        with self._cond:
            return len(self._pending)

    def idle(self) -> bool:
        with self._cond:
            return not self._pending and not self._busy and not self._want_decomposition

    # -- consumer side -------------------------------------------------------

    def _pop(self):
        with self._cond:
            if not self._pending or self.found:
                return None
            self._busy = True
            return self._pending.pop(0)

    def _decompose(self):
        with self._cond:
            if not self._want_decomposition:
                return None
            self._busy = True
        result, error = None, None
        try:
            for attempt in range(self.max_retries + 1):
                t0 = time.perf_counter()
                try:
                    result = self.oracle.decompose(self.instruction)
                    break
                except RetryableOracleError as exc:
                    error = str(exc)
                    if attempt < self.max_retries and self.backoff:
                        time.sleep(self.backoff * 2 ** attempt)
                except NoTarget as exc:
                    error = f"no_target: {exc}"
                    break
                except OracleError as exc:
                    error = str(exc)
                    break
            if result is not None:
                error = None
                self.events.append({"event": "decompose", "targets": sorted(result.targets),
                                    "related": sorted(result.related),
                                    "latency_ms": (time.perf_counter() - t0) * 1000.0})
            else:
                self.events.append({"event": "decompose_failed", "error": error})
            self.decomposition, self.decomposition_error = result, error
            event = DecompositionReady(result, error)
            self.results.put(event)
            return event
        finally:
            with self._cond:
                self._want_decomposition = False
                self._busy = False

    def step(self):
        """Process one pending task; return the emitted event, if any."""
        if self._want_decomposition:
            return self._decompose()
        item = self._pop()
        if item is None:
            return None
        task, requeues = item
        try:
            return self._process(task, requeues)
        finally:
            with self._cond:
                self._busy = False

    def _process(self, task: SubgraphTask, requeues: int):
        if task.key in self._done_keys:
            self.dedup_skips += 1
            self.events.append({"event": "dedup_skip", "kind": task.kind.name,
                                "anchors": list(task.anchor_ids), "graph_version": task.graph_version})
            return self._maybe_exhausted()
        verdict = None
        for attempt in range(self.max_retries + 1):
            t0 = time.perf_counter()
            try:
                self.oracle_calls += 1
                verdict = self.oracle.reason_subgraph(task.subgraph, self.instruction)
            except RetryableOracleError as exc:
                self.events.append({"event": "oracle_error", "kind": task.kind.name,
                                    "anchors": list(task.anchor_ids), "attempt": attempt,
                                    "error": str(exc)})
                if attempt < self.max_retries and self.backoff:
                    time.sleep(self.backoff * 2 ** attempt)
                continue
            latency = (time.perf_counter() - t0) * 1000.0
            self.events.append({
                "event": "oracle_call", "kind": task.kind.name, "priority": round(task.priority, 9),
                "anchors": list(task.anchor_ids), "graph_version": task.graph_version,
                "visible": verdict.visible, "anchor_id": verdict.anchor_id, "latency_ms": latency,
            })
            break
        if verdict is None:
            with self._cond:
                if requeues < self.max_requeues:
                    self._pending.append((task, requeues + 1))
                else:
                    log.warning("dropping task %s after repeated oracle failures", task.key[:8])
            return None
        self._done_keys.add(task.key)
        self._processed_since_notice += 1
        if verdict.visible:
            with self._cond:
                if task.key not in self._live_keys:
                    # the subgraph changed while the call was in flight
                    self._done_keys.discard(task.key)
                    return None
                self.found = True
                self._pending.clear()
            event = TargetFound(verdict.anchor_id, verdict.object_id,
                                _goal_centroid(task.subgraph, verdict), verdict, task.graph_version)
            self.results.put(event)
            return event
        return self._maybe_exhausted()

    def _maybe_exhausted(self):
        with self._cond:
            if self._pending or self._processed_since_notice == 0:
                return None
            self._processed_since_notice = 0
        event = Exhausted(self._latest_version, self.oracle_calls)
        self.results.put(event)
        return event

    def run_pending(self, budget: int | None = None) -> list:
        """Lockstep mode: process up to ``budget`` tasks (all when None)."""
        events = []
        done = 0
        if self._want_decomposition:
            ev = self._decompose()
            if ev is not None:
                events.append(ev)
        while budget is None or done < budget:
            if self._pop_peek() is None:
                break
            ev = self.step()
            done += 1
            if ev is not None:
                events.append(ev)
            if self.found:
                break
        return events

    def _pop_peek(self):
        with self._cond:
            return self._pending[0] if self._pending and not self.found else None

    def drain_results(self) -> list:
        out = []
        while True:
            try:
                out.append(self.results.get_nowait())
            except queue.Empty:
                return out

    # -- thread lifecycle ----------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop = False
        self._thread = threading.Thread(target=self._loop, name="reasoning-worker", daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            with self._cond:
                while not self._stop and not self._want_decomposition and (not self._pending or self.found):
                    self._cond.wait()
                if self._stop:
                    return
            self.step()

    def stop(self, timeout: float | None = None) -> None:
        if self._thread is None:
            return
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        self._thread.join(timeout)
        self._thread = None


def _goal_centroid(sub: CognitiveMemoryGraph, verdict: ReasoningVerdict) -> tuple[float, float]:
    if verdict.object_id is not None and verdict.object_id in sub.objects:
        return sub.objects[verdict.object_id].centroid
    anchor = sub.anchors[verdict.anchor_id]
    return anchor.pose.position
