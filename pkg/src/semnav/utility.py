"""Frontier utility: Gaussian semantic field plus out-of-boundary image evidence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .memory import CognitiveMemoryGraph, ViewEntry
from .oracle import AnchorDescriptor, Instruction, InstructionDecomposition
from .world import Frontier, wrap_angle


@dataclass(frozen=True)
class UtilityConfig:
    lambda_struct: float = 0.5
    lambda_vis: float = 0.5
    gamma: float = 2.0
    sigma_min: float = 0.25
    sigma_max: float = 3.0
    # literal reading: the peak multiplies both inside and outside the kernel
    double_weight: bool = False
    view_sector: float = math.radians(45)  # half-width around the frontier bearing
    field_resolution: float = 0.1

    def __post_init__(self):
        if self.lambda_struct < 0 or self.lambda_vis < 0:
            raise ValueError("utility weights must be non-negative")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")


@dataclass(frozen=True)
class SemanticFieldSource:
    center: tuple[float, float]
    peak: float
    sigma: float
    boosted_peak: float
    label: str = ""

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.peak < 0:
            raise ValueError("peak must be non-negative")


def source_sigma(half_extents, cfg: UtilityConfig = UtilityConfig()) -> float:
    return float(min(cfg.sigma_max, max(cfg.sigma_min, sum(half_extents) / len(half_extents))))


def build_sources(graph: CognitiveMemoryGraph, instruction: Instruction,
                  decomposition: InstructionDecomposition | None, oracle,
                  cfg: UtilityConfig = UtilityConfig()) -> list[SemanticFieldSource]:
    related = decomposition.related if decomposition is not None else frozenset()
    out = []
    for oid in sorted(graph.objects):
        obj = graph.objects[oid]
        peak = float(oracle.similarity(obj.label, instruction))
        boosted = cfg.gamma * peak if obj.label in related else peak
        out.append(SemanticFieldSource(obj.centroid, peak, source_sigma(obj.half_extents, cfg),
                                       boosted, obj.label))
    return out


def field_value(sources, p, double_weight: bool = False) -> float:
    """Superposed field at ``p``; a source contributes its boosted peak times the kernel."""
    total = 0.0
    for s in sources:
        d2 = (p[0] - s.center[0]) ** 2 + (p[1] - s.center[1]) ** 2
        w = s.boosted_peak * s.peak if double_weight else s.boosted_peak
        total += w * math.exp(-d2 / (2.0 * s.sigma ** 2))
    return total


def rasterize_field(sources, width: int, height: int, resolution: float,
                    double_weight: bool = False) -> np.ndarray:
    """Field sampled at cell centres, shape ``(height, width)``."""
    xs = (np.arange(width) + 0.5) * resolution
    ys = (np.arange(height) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    out = np.zeros((height, width))
    for s in sources:
        w = s.boosted_peak * s.peak if double_weight else s.boosted_peak
        if w == 0:
            continue
        out += w * np.exp(-((gx - s.center[0]) ** 2 + (gy - s.center[1]) ** 2) / (2.0 * s.sigma ** 2))
    return out


def score_structural(frontier: Frontier, sources, cfg: UtilityConfig = UtilityConfig()) -> float:
    return field_value(sources, frontier.centroid, cfg.double_weight)


def view_descriptor(anchor_id: int, anchor_pose, view: tuple[ViewEntry, ...], target_point,
                    sector: float) -> AnchorDescriptor:
    """Labels of the anchor image that lie within ``sector`` of the bearing to ``target_point``."""
    dx, dy = target_point[0] - anchor_pose.x, target_point[1] - anchor_pose.y
    if math.hypot(dx, dy) < 1e-9:
        return AnchorDescriptor(anchor_id, tuple(v.label for v in view))
    bearing = math.atan2(dy, dx) - anchor_pose.heading
    labels = tuple(v.label for v in view if abs(wrap_angle(v.bearing - bearing)) <= sector)
    return AnchorDescriptor(anchor_id, labels)


def score_visual(frontier: Frontier, oracle, instruction: Instruction, anchors: dict,
                 cfg: UtilityConfig = UtilityConfig()) -> float:
    """Oracle similarity of the frontier's anchor image to the instruction.

    ``anchors`` maps anchor id to ``VisualAnchor`` (the harness keeps an
    archive so evidence survives compaction). No anchor gives 0.
    """
    if frontier.anchor_id is None or frontier.anchor_id not in anchors:
        return 0.0
    anchor = anchors[frontier.anchor_id]
    desc = view_descriptor(anchor.id, anchor.pose, anchor.image_ref, frontier.centroid, cfg.view_sector)
    return float(oracle.similarity(desc, instruction))


def score_frontier(frontier: Frontier, sources, oracle, instruction: Instruction, anchors: dict,
                   cfg: UtilityConfig = UtilityConfig()) -> float:
    """Weighted sum of the two terms; a zero weight skips its computation entirely."""
    total = 0.0
    if cfg.lambda_struct:
        total += cfg.lambda_struct * score_structural(frontier, sources, cfg)
    if cfg.lambda_vis:
        total += cfg.lambda_vis * score_visual(frontier, oracle, instruction, anchors, cfg)
    return total
