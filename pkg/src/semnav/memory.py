"""Bipartite memory graph of visual anchors and merged object nodes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .world import Pose, wrap_angle

GRAPH_FORMAT = "semnav-graph"
GRAPH_VERSION = 1
MAX_POINTS = 512


class GraphError(ValueError):
    pass


class ViewEntry(NamedTuple):
    """One object seen in an anchor's symbolic image."""
    label: str
    bearing: float
    distance: float


@dataclass(frozen=True)
class VisualAnchor:
    id: int
    pose: Pose
    image_ref: tuple[ViewEntry, ...] = ()
    timestamp: int = 0
    cost: float = 1.0

    def __post_init__(self):
        if not self.cost > 0:
            raise GraphError(f"anchor {self.id}: cost must be positive")

    def labels(self) -> list[str]:
        return [v.label for v in self.image_ref]


def _readonly(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ObjectNode:
    """Merged object: point set plus unit-norm semantic feature.

    Incoming detections use ``id=-1``; the graph assigns ids on insertion.
    """

    id: int
    label: str
    points: np.ndarray
    embedding: np.ndarray
    observation_count: int = 1

    def __post_init__(self):
        pts = _readonly(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise GraphError("points must be a non-empty (n, 3) array")
        emb = np.array(self.embedding, dtype=float)
        norm = np.linalg.norm(emb)
        if norm == 0:
            raise GraphError("embedding must be non-zero")
        if abs(norm - 1.0) > 1e-9:
            emb = emb / norm
        emb.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "embedding", emb)
        if self.observation_count < 1:
            raise GraphError("observation_count must be >= 1")

    @property
    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)

    @property
    def centroid(self) -> tuple[float, float]:
        c = self.points[:, :2].mean(axis=0)
        return float(c[0]), float(c[1])

    @property
    def half_extents(self) -> tuple[float, float]:
        lo, hi = self.extent
        return float(hi[0] - lo[0]) / 2, float(hi[1] - lo[1]) / 2


@dataclass(frozen=True)
class MergeConfig:
    lambda_geom: float = 0.5
    lambda_sem: float = 0.5
    merge_threshold: float = 0.6
    anchor_dist_threshold: float = 0.5
    anchor_rot_threshold: float = math.radians(30)
    geometry: str = "aabb"  # or "voxel"
    voxel_size: float = 0.1

    def __post_init__(self):
        if self.lambda_geom < 0 or self.lambda_sem < 0:
            raise ValueError("merge weights must be non-negative")
        if abs(self.lambda_geom + self.lambda_sem - 1.0) > 1e-9:
            raise ValueError("lambda_geom + lambda_sem must equal 1")
        if self.geometry not in ("aabb", "voxel"):
            raise ValueError(f"unknown geometry mode {self.geometry!r}")


@dataclass
class MergeReport:
    anchor_id: int
    merged: list[tuple[int, int]] = field(default_factory=list)  # (incoming index, node id)
    created: list[int] = field(default_factory=list)
    resolved: list[int] = field(default_factory=list)  # node id per incoming object


# --------------------------------------------------------------------------
# anchor selection and similarity

def should_select_anchor(pose: Pose, last_anchor_pose: Pose | None, detections: Iterable[str],
                         known_labels: set, cfg: MergeConfig = MergeConfig()) -> bool:
    if last_anchor_pose is None:
        return True
    if any(label not in known_labels for label in detections):
        return True
    moved = math.hypot(pose.x - last_anchor_pose.x, pose.y - last_anchor_pose.y)
    turned = abs(wrap_angle(pose.heading - last_anchor_pose.heading))
    return moved > cfg.anchor_dist_threshold or turned > cfg.anchor_rot_threshold


def aabb_iou(a_lo, a_hi, b_lo, b_hi) -> float:
    a_lo, a_hi, b_lo, b_hi = map(np.asarray, (a_lo, a_hi, b_lo, b_hi))
    inter = np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0, None).prod()
    union = (a_hi - a_lo).prod() + (b_hi - b_lo).prod() - inter
    if union <= 0:
        # degenerate (flat) boxes: identical boxes still count as a full match
        return 1.0 if np.allclose(a_lo, b_lo) and np.allclose(a_hi, b_hi) else 0.0
    return float(inter / union)


def voxel_iou(a: np.ndarray, b: np.ndarray, voxel: float) -> float:
    va = {tuple(v) for v in np.floor(a / voxel).astype(np.int64)}
    vb = {tuple(v) for v in np.floor(b / voxel).astype(np.int64)}
    return len(va & vb) / len(va | vb)


def object_similarity(a: ObjectNode, b: ObjectNode, cfg: MergeConfig = MergeConfig()) -> float:
    if cfg.geometry == "voxel":
        geom = voxel_iou(a.points, b.points, cfg.voxel_size)
    else:
        geom = aabb_iou(*a.extent, *b.extent)
    sem = max(0.0, float(np.dot(a.embedding, b.embedding)))
    return min(1.0, cfg.lambda_geom * geom + cfg.lambda_sem * min(sem, 1.0))


def _merge_nodes(existing: ObjectNode, incoming: ObjectNode) -> ObjectNode:
    pts = np.vstack([existing.points, incoming.points])
    if len(pts) > MAX_POINTS:
        pts = pts[np.linspace(0, len(pts) - 1, MAX_POINTS).round().astype(int)]
    n = existing.observation_count
    emb = n * existing.embedding + incoming.embedding
    emb = emb / np.linalg.norm(emb)
    return ObjectNode(existing.id, existing.label, pts, emb, n + 1)


# --------------------------------------------------------------------------
# graph

class CognitiveMemoryGraph:
    """Anchors, objects and observation edges with a monotone version counter.

    Values stored in the dictionaries are immutable, so ``snapshot`` only
    copies the containers; a snapshot stays valid after later mutations.
    """

    def __init__(self):
        self.anchors: dict[int, VisualAnchor] = {}
        self.objects: dict[int, ObjectNode] = {}
        self._anchor_objects: dict[int, frozenset] = {}
        self._object_anchors: dict[int, frozenset] = {}
        self.version = 0
        self._next_object_id = 0

    # -- read API ------------------------------------------------------------

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, o) for a, objs in self._anchor_objects.items() for o in objs}

    def objects_of(self, anchor_id: int) -> frozenset:
        return self._anchor_objects[anchor_id]

    def anchors_of(self, object_id: int) -> frozenset:
        return self._object_anchors.get(object_id, frozenset())

    def degree(self, anchor_id: int) -> int:
        return len(self._anchor_objects[anchor_id])

    def known_labels(self) -> set[str]:
        return {o.label for o in self.objects.values()}

    def __len__(self):
        return len(self.anchors)

    def is_empty(self) -> bool:
        return not self.anchors and not self.objects

    def snapshot(self) -> "CognitiveMemoryGraph":
        g = CognitiveMemoryGraph()
        g.anchors = dict(self.anchors)
        g.objects = dict(self.objects)
        g._anchor_objects = dict(self._anchor_objects)
        g._object_anchors = dict(self._object_anchors)
        g.version = self.version
        g._next_object_id = self._next_object_id
        return g

    # -- mutation ------------------------------------------------------------

    def insert_anchor(self, anchor: VisualAnchor, objects: list[ObjectNode],
                      cfg: MergeConfig = MergeConfig()) -> MergeReport:
        """Add ``anchor`` and merge each incoming object into the graph.

        An incoming object joins the most similar existing node when that
        similarity exceeds ``cfg.merge_threshold`` (ties go to the lowest
        node id); otherwise it becomes a new node.
        """
        if anchor.id in self.anchors:
            raise GraphError(f"duplicate anchor id {anchor.id}")
        report = MergeReport(anchor.id)
        resolved = set()
        for idx, obj in enumerate(objects):
            best_id, best_sim = None, -math.inf
            for nid in sorted(self.objects):
                sim = object_similarity(obj, self.objects[nid], cfg)
                if sim > best_sim:
                    best_id, best_sim = nid, sim
            if best_id is not None and best_sim > cfg.merge_threshold:
                self.objects[best_id] = _merge_nodes(self.objects[best_id], obj)
                report.merged.append((idx, best_id))
                report.resolved.append(best_id)
                resolved.add(best_id)
            else:
                nid = self._next_object_id
                self._next_object_id += 1
                self.objects[nid] = ObjectNode(nid, obj.label, obj.points, obj.embedding, 1)
                report.created.append(nid)
                report.resolved.append(nid)
                resolved.add(nid)
        self.anchors[anchor.id] = anchor
        self._anchor_objects[anchor.id] = frozenset(resolved)
        for oid in resolved:
            self._object_anchors[oid] = self._object_anchors.get(oid, frozenset()) | {anchor.id}
        self.version += 1
        return report

    def remove_anchors(self, anchor_ids: Iterable[int]) -> None:
        """Drop anchors and their edges; object nodes are kept."""
        anchor_ids = set(anchor_ids)
        missing = anchor_ids - self.anchors.keys()
        if missing:
            raise GraphError(f"unknown anchor ids {sorted(missing)}")
        if not anchor_ids:
            return
        for aid in anchor_ids:
            for oid in self._anchor_objects.pop(aid):
                self._object_anchors[oid] = self._object_anchors[oid] - {aid}
            del self.anchors[aid]
        self.version += 1

    # -- views ---------------------------------------------------------------

    def subgraph_of_anchors(self, anchor_ids: Iterable[int]) -> "CognitiveMemoryGraph":
        """Induced subgraph: the anchors, every object they observe, and the edges."""
        anchor_ids = set(anchor_ids)
        missing = anchor_ids - self.anchors.keys()
        if missing:
            raise GraphError(f"unknown anchor ids {sorted(missing)}")
        g = CognitiveMemoryGraph()
        g.version = self.version
        g._next_object_id = self._next_object_id
        for aid in sorted(anchor_ids):
            g.anchors[aid] = self.anchors[aid]
            g._anchor_objects[aid] = self._anchor_objects[aid]
            for oid in self._anchor_objects[aid]:
                g.objects[oid] = self.objects[oid]
                g._object_anchors[oid] = g._object_anchors.get(oid, frozenset()) | {aid}
        return g

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "version": GRAPH_VERSION,
            "graph_version": self.version,
            "next_object_id": self._next_object_id,
            "anchors": [
                {
                    "id": a.id,
                    "pose": {"position": list(a.pose.position), "heading": a.pose.heading,
                             "velocity": list(a.pose.velocity)},
                    "timestamp": a.timestamp,
                    "cost": a.cost,
                    "view": [[v.label, v.bearing, v.distance] for v in a.image_ref],
                }
                for a in (self.anchors[k] for k in sorted(self.anchors))
            ],
            "objects": [
                {
                    "id": o.id,
                    "label": o.label,
                    "centroid": list(o.centroid),
                    "extent": [o.extent[0].tolist(), o.extent[1].tolist()],
                    "embedding": o.embedding.tolist(),
                    "points": o.points.tolist(),
                    "observation_count": o.observation_count,
                }
                for o in (self.objects[k] for k in sorted(self.objects))
            ],
            "edges": sorted([a, o] for a, o in self.edges),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CognitiveMemoryGraph":
        if data.get("format") != GRAPH_FORMAT or data.get("version") != GRAPH_VERSION:
            raise GraphError("not a semnav-graph v1 document")
        g = cls()
        try:
            for a in data["anchors"]:
                pose = Pose(tuple(a["pose"]["position"]), a["pose"]["heading"],
                            tuple(a["pose"].get("velocity", (0.0, 0.0))))
                view = tuple(ViewEntry(str(l), float(b), float(d)) for l, b, d in a.get("view", []))
                g.anchors[int(a["id"])] = VisualAnchor(int(a["id"]), pose, view,
                                                       int(a.get("timestamp", 0)), float(a.get("cost", 1.0)))
                g._anchor_objects[int(a["id"])] = frozenset()
            for o in data["objects"]:
                g.objects[int(o["id"])] = ObjectNode(int(o["id"]), o["label"], np.array(o["points"]),
                                                     np.array(o["embedding"]), int(o["observation_count"]))
            for aid, oid in data["edges"]:
                if aid not in g.anchors or oid not in g.objects:
                    raise GraphError(f"dangling edge ({aid}, {oid})")
                g._anchor_objects[aid] = g._anchor_objects[aid] | {oid}
                g._object_anchors[oid] = g._object_anchors.get(oid, frozenset()) | {aid}
            g.version = int(data.get("graph_version", 0))
            g._next_object_id = int(data.get("next_object_id", max(g.objects, default=-1) + 1))
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
        return g

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "CognitiveMemoryGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def audit(graph: CognitiveMemoryGraph, allow_isolated: bool = True) -> list[str]:
    """Return a list of structural problems (empty when the graph is sound)."""
    problems = []
    edges = graph.edges
    for a, o in edges:
        if a not in graph.anchors:
            problems.append(f"edge ({a},{o}) has no anchor")
        if o not in graph.objects:
            problems.append(f"edge ({a},{o}) has no object")
        if a in graph.objects and a not in graph.anchors:
            problems.append(f"edge ({a},{o}) is not anchor-object")
    if set(graph._anchor_objects) != set(graph.anchors):
        problems.append("anchor adjacency out of sync")
    for oid, anchors in graph._object_anchors.items():
        for aid in anchors:
            if oid not in graph._anchor_objects.get(aid, ()):
                problems.append(f"reverse edge ({aid},{oid}) missing")
    for o in graph.objects.values():
        if abs(np.linalg.norm(o.embedding) - 1.0) > 1e-9:
            problems.append(f"object {o.id} embedding not unit norm")
    if not allow_isolated:
        for aid in graph.anchors:
            if not graph.objects_of(aid):
                problems.append(f"anchor {aid} is isolated")
    return problems
