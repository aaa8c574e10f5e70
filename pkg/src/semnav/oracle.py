"""Model-dependent judgments behind one interface.

``MockOracle`` is a deterministic lexical stand-in for the image-text
similarity model and the vision-language model; ``RemoteOracle`` forwards
the same calls to an HTTP service speaking the JSON protocol documented in
``docs/formats.md``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .memory import CognitiveMemoryGraph
from .world import wrap_angle


class OracleError(Exception):
    pass


class NoTarget(OracleError):
    """The instruction names nothing the oracle recognises as a target."""


class RetryableOracleError(OracleError):
    """Transport failure or a response that failed schema validation."""


@dataclass(frozen=True)
class Instruction:
    text: str
    id: str = ""

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("instruction text must be non-empty")


@dataclass(frozen=True)
class InstructionDecomposition:
    targets: frozenset
    related: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        object.__setattr__(self, "related", frozenset(self.related))
        if not self.targets:
            raise ValueError("decomposition needs at least one target")
        if self.targets & self.related:
            raise ValueError("targets and related labels must be disjoint")


@dataclass(frozen=True)
class ReasoningVerdict:
    visible: bool
    anchor_id: int | None = None
    bbox: tuple[float, float, float, float] | None = None
    evidence: str = ""
    object_id: int | None = None

    def __post_init__(self):
        if self.visible and self.anchor_id is None:
            raise ValueError("a visible verdict must name an anchor")


@dataclass(frozen=True)
class AnchorDescriptor:
    """What an anchor's image shows, possibly restricted to a bearing sector."""
    anchor_id: int
    labels: tuple[str, ...] = ()


class SemanticOracle:
    """Interface. Implementations must be safe to share across threads."""

    def similarity(self, subject, instruction: Instruction) -> float:
        raise NotImplementedError

    def decompose(self, instruction: Instruction) -> InstructionDecomposition:
        raise NotImplementedError

    def reason_subgraph(self, sub: CognitiveMemoryGraph, instruction: Instruction) -> ReasoningVerdict:
        raise NotImplementedError

    def embed(self, label: str) -> np.ndarray:
        raise NotImplementedError


# --------------------------------------------------------------------------
# lookup tables

@dataclass(frozen=True)
class OracleTables:
    vocabulary: frozenset
    synonyms: dict = field(default_factory=dict)
    affinity: dict = field(default_factory=dict)  # frozenset({a, b}) -> score
    cooccurrence: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "OracleTables":
        if data.get("format") != "semnav-oracle-tables":
            raise ValueError("not a semnav-oracle-tables document")
        vocab = frozenset(str(v).lower() for v in data.get("vocabulary", []))
        synonyms = {str(k).lower(): str(v).lower() for k, v in data.get("synonyms", {}).items()}
        affinity = {}
        for a, b, s in data.get("affinity", []):
            s = float(s)
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"affinity {a}/{b} outside [0, 1]")
            affinity[frozenset((a.lower(), b.lower()))] = s
        cooc = {str(k).lower(): tuple(str(v).lower() for v in vs)
                for k, vs in data.get("cooccurrence", {}).items()}
        return cls(vocab, synonyms, affinity, cooc)

    @classmethod
    def load(cls, path) -> "OracleTables":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "OracleTables":
        text = resources.files("semnav").joinpath("data/oracle_tables.json").read_text()
        return cls.from_dict(json.loads(text))

    def canonical(self, label: str) -> str:
        label = label.lower().strip()
        return self.synonyms.get(label, label)


_RELATION_MARKERS = ("near", "beside", "by", "next to", "close to", "on", "under",
                     "behind", "in front of", "with", "opposite", "between", "inside", "in")


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z]+", text.lower())


def label_embedding(label: str, dim: int = 32) -> np.ndarray:
    """Deterministic pseudo-random unit vector per label."""
    seed = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class MockOracle(SemanticOracle):
    """Table-driven oracle.

    * label similarity: 1.0 when the label (or a synonym) is a target of the
      instruction, else the best affinity-table score against a target, else 0
    * anchor similarity: best label similarity over the labels in view
    * ``vlm_latency`` seconds are slept in ``decompose`` and
      ``reason_subgraph`` to emulate a slow remote model
    """

    def __init__(self, tables: OracleTables | None = None, visibility_threshold: float = 0.8,
                 embedding_dim: int = 32, vlm_latency: float = 0.0):
        self.tables = tables or OracleTables.default()
        self.visibility_threshold = visibility_threshold
        self.embedding_dim = embedding_dim
        self.vlm_latency = vlm_latency
        self._phrases = self._build_phrases()
        self._decompose_cached = lru_cache(maxsize=256)(self._decompose_text)
        self._label_sim = lru_cache(maxsize=8192)(self._label_similarity)

    def _build_phrases(self):
        phrases = {}
        for label in self.tables.vocabulary:
            phrases[tuple(_tokens(label))] = label
        for syn, label in self.tables.synonyms.items():
            phrases[tuple(_tokens(syn))] = label
        return sorted(phrases.items(), key=lambda kv: -len(kv[0]))

    def _mentions(self, text: str):
        """Yield ``(label, after_relation_marker)`` in reading order."""
        toks = _tokens(text)
        markers = sorted((tuple(m.split()) for m in _RELATION_MARKERS), key=len, reverse=True)
        i, related_mode = 0, False
        while i < len(toks):
            marker = next((m for m in markers if tuple(toks[i:i + len(m)]) == m), None)
            hit = next((p for p in self._phrases if tuple(toks[i:i + len(p[0])]) == p[0]), None)
            if hit is not None:
                yield hit[1], related_mode
                i += len(hit[0])
                continue
            if marker is not None:
                related_mode = True
                i += len(marker)
                continue
            i += 1

    def _decompose_text(self, text: str) -> InstructionDecomposition:
        targets, related = [], []
        for label, after_marker in self._mentions(text):
            (related if after_marker else targets).append(label)
        if not targets:
            raise NoTarget(f"no recognisable target in {text!r}")
        rel = set(related)
        for t in targets:
            rel.update(self.tables.cooccurrence.get(t, ()))
        return InstructionDecomposition(frozenset(targets), frozenset(rel) - set(targets))

    def decompose(self, instruction: Instruction) -> InstructionDecomposition:
        if self.vlm_latency:
            time.sleep(self.vlm_latency)
        return self._decompose_cached(instruction.text)

    def _label_similarity(self, label: str, text: str) -> float:
        try:
            targets = self._decompose_cached(text).targets
        except NoTarget:
            return 0.0
        label = self.tables.canonical(label)
        if label in targets:
            return 1.0
        return max((self.tables.affinity.get(frozenset((label, t)), 0.0) for t in targets), default=0.0)

    def similarity(self, subject, instruction: Instruction) -> float:
        if isinstance(subject, AnchorDescriptor):
            return max((self._label_sim(l, instruction.text) for l in subject.labels), default=0.0)
        return self._label_sim(str(subject), instruction.text)

    def embed(self, label: str) -> np.ndarray:
        return label_embedding(self.tables.canonical(label), self.embedding_dim)

    def reason_subgraph(self, sub: CognitiveMemoryGraph, instruction: Instruction) -> ReasoningVerdict:
        if not sub.anchors:
            raise ValueError("cannot reason over an empty subgraph")
        if self.vlm_latency:
            time.sleep(self.vlm_latency)
        scored = [(self.similarity(o.label, instruction), o.id) for o in sub.objects.values()]
        hits = [(s, oid) for s, oid in scored if s >= self.visibility_threshold]
        if not hits:
            return ReasoningVerdict(False, evidence="no object in view matches the instruction")
        _, oid = min(hits, key=lambda t: (-t[0], t[1]))
        anchors = sorted(sub.anchors_of(oid), key=lambda a: (-sub.degree(a), a))
        aid = anchors[0]
        obj = sub.objects[oid]
        return ReasoningVerdict(True, aid, _project_bbox(sub.anchors[aid].pose, obj),
                                f"{obj.label} (object {oid}) seen from anchor {aid}", oid)


def _project_bbox(pose, obj) -> tuple[float, float, float, float]:
    """Box in a panoramic image frame: u from bearing, v from elevation, both in [0, 1]."""
    lo, hi = obj.extent
    corners = [(x, y) for x in (lo[0], hi[0]) for y in (lo[1], hi[1])]
    bearings = [wrap_angle(math.atan2(y - pose.y, x - pose.x) - pose.heading) for x, y in corners]
    us = [0.5 - b / (2 * math.pi) for b in bearings]
    cx, cy = obj.centroid
    dist = max(math.hypot(cx - pose.x, cy - pose.y), 1e-3)
    top = 0.5 - math.atan2(float(hi[2]) - 0.8, dist) / math.pi
    bottom = 0.5 - math.atan2(float(lo[2]) - 0.8, dist) / math.pi
    return (min(us), min(top, bottom), max(us), max(top, bottom))


# --------------------------------------------------------------------------
# remote service

class RemoteOracle(SemanticOracle):
    """JSON-over-HTTP client. One POST per call to ``url`` with an ``op`` field."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    @classmethod
    def from_env(cls, url: str | None = None, timeout_ms: int | None = None) -> "RemoteOracle":
        url = url or os.environ.get("ORACLE_URL")
        if not url:
            raise OracleError("remote oracle needs ORACLE_URL")
        if timeout_ms is None:
            timeout_ms = int(os.environ.get("ORACLE_TIMEOUT_MS", "10000"))
        return cls(url, timeout_ms / 1000.0)

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode())
        except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
            raise RetryableOracleError(f"oracle request failed: {exc}") from exc
        if not isinstance(data, dict):
            raise RetryableOracleError("oracle response is not an object")
        return data

    @staticmethod
    def _instruction(instruction: Instruction) -> dict:
        return {"id": instruction.id, "text": instruction.text}

    def similarity(self, subject, instruction: Instruction) -> float:
        if isinstance(subject, AnchorDescriptor):
            subj = {"anchor_id": subject.anchor_id, "labels": list(subject.labels)}
        else:
            subj = {"label": str(subject)}
        data = self._post({"op": "similarity", "subject": subj,
                           "instruction": self._instruction(instruction)})
        score = data.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
            raise RetryableOracleError(f"invalid similarity score {score!r}")
        return float(score)

    def decompose(self, instruction: Instruction) -> InstructionDecomposition:
        data = self._post({"op": "decompose", "instruction": self._instruction(instruction)})
        if data.get("error") == "no_target":
            raise NoTarget(f"service found no target in {instruction.text!r}")
        targets, related = data.get("targets"), data.get("related", [])
        if not isinstance(targets, list) or not isinstance(related, list) \
                or not all(isinstance(t, str) for t in targets + related):
            raise RetryableOracleError("decomposition must carry string lists")
        try:
            return InstructionDecomposition(frozenset(targets), frozenset(related))
        except ValueError as exc:
            raise RetryableOracleError(f"invalid decomposition: {exc}") from exc

    def reason_subgraph(self, sub: CognitiveMemoryGraph, instruction: Instruction) -> ReasoningVerdict:
        if not sub.anchors:
            raise ValueError("cannot reason over an empty subgraph")
        payload = {
            "op": "reason",
            "instruction": self._instruction(instruction),
            "anchors": [
                {"id": a.id, "position": list(a.pose.position), "heading": a.pose.heading,
                 "view": [[v.label, v.bearing, v.distance] for v in a.image_ref],
                 "objects": sorted(sub.objects_of(a.id))}
                for a in (sub.anchors[k] for k in sorted(sub.anchors))
            ],
            "objects": [{"id": o.id, "label": o.label} for o in (sub.objects[k] for k in sorted(sub.objects))],
        }
        data = self._post(payload)
        visible = data.get("visible")
        if not isinstance(visible, bool):
            raise RetryableOracleError("verdict lacks boolean 'visible'")
        anchor_id = data.get("anchor_id")
        bbox = data.get("bbox")
        evidence = data.get("evidence", "")
        if visible:
            if not isinstance(anchor_id, int) or anchor_id not in sub.anchors:
                raise RetryableOracleError(f"verdict anchor {anchor_id!r} not in the subgraph")
        if bbox is not None:
            if not (isinstance(bbox, list) and len(bbox) == 4 and all(isinstance(v, (int, float)) for v in bbox)):
                raise RetryableOracleError("bbox must be four numbers")
            bbox = tuple(float(v) for v in bbox)
        if not isinstance(evidence, str):
            raise RetryableOracleError("evidence must be a string")
        object_id = data.get("object_id")
        if visible and object_id is None:
            label_hits = [oid for oid in sub.objects_of(anchor_id)]
            object_id = min(label_hits) if label_hits else None
        return ReasoningVerdict(visible, anchor_id if visible else None, bbox, evidence, object_id)

    def embed(self, label: str) -> np.ndarray:
        data = self._post({"op": "embed", "label": label})
        emb = data.get("embedding")
        if not isinstance(emb, list) or not emb:
            raise RetryableOracleError("embedding must be a non-empty list")
        v = np.asarray(emb, dtype=float)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise RetryableOracleError("embedding must be finite and non-zero")
        return v / norm


class CountingOracle(SemanticOracle):
    """Wraps another oracle and counts calls per kind (thread-safe)."""

    def __init__(self, inner: SemanticOracle):
        self.inner = inner
        self.counts = Counter()
        self._lock = threading.Lock()

    def _tick(self, key):
        with self._lock:
            self.counts[key] += 1

    def similarity(self, subject, instruction):
        self._tick("similarity:anchor" if isinstance(subject, AnchorDescriptor) else "similarity:label")
        return self.inner.similarity(subject, instruction)

    def decompose(self, instruction):
        self._tick("decompose")
        return self.inner.decompose(instruction)

    def reason_subgraph(self, sub, instruction):
        self._tick("reason")
        return self.inner.reason_subgraph(sub, instruction)

    def embed(self, label):
        self._tick("embed")
        return self.inner.embed(label)
