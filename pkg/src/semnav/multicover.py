"""Anchor compaction as weighted set multicover.

Pick a minimum-cost set of anchors such that every object keeps at least
``r_j = min(r, deg(o_j))`` observing anchors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .memory import CognitiveMemoryGraph


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class MulticoverInstance:
    anchor_costs: tuple[float, ...]
    coverage: tuple[frozenset, ...]  # per object: indices of anchors observing it
    required: tuple[int, ...]
    r: int = 1
    anchor_ids: tuple[int, ...] = ()
    object_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.coverage) != len(self.required):
            raise ValueError("coverage and required must align")
        if any(c <= 0 for c in self.anchor_costs):
            raise ValueError("anchor costs must be positive")
        for j, (cov, req) in enumerate(zip(self.coverage, self.required)):
            if not 0 < req <= len(cov):
                raise ValueError(f"object {j}: required {req} not in (0, {len(cov)}]")
            if any(not 0 <= i < len(self.anchor_costs) for i in cov):
                raise ValueError(f"object {j}: coverage index out of range")

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_costs)

    @classmethod
    def from_sets(cls, anchor_sets, r: int, costs=None) -> "MulticoverInstance":
        """Build from per-anchor object sets, e.g. ``[{0, 1}, {0}, {1}]``."""
        objects = sorted(set().union(*anchor_sets)) if anchor_sets else []
        index = {o: j for j, o in enumerate(objects)}
        cov = [set() for _ in objects]
        for i, s in enumerate(anchor_sets):
            for o in s:
                cov[index[o]].add(i)
        costs = tuple(float(c) for c in costs) if costs is not None else (1.0,) * len(anchor_sets)
        return cls(costs, tuple(frozenset(c) for c in cov),
                   tuple(min(r, len(c)) for c in cov), r,
                   tuple(range(len(anchor_sets))), tuple(objects))

    def is_feasible(self, selected) -> bool:
        selected = set(selected)
        return all(len(cov & selected) >= req for cov, req in zip(self.coverage, self.required))

    def cost(self, selected) -> float:
        return math.fsum(self.anchor_costs[i] for i in selected)


@dataclass(frozen=True)
class SelectionResult:
    selected: frozenset
    total_cost: float
    optimal: bool


def build_instance(graph: CognitiveMemoryGraph, r: int) -> MulticoverInstance:
    if r < 1:
        raise ValueError("r must be >= 1")
    anchor_ids = tuple(sorted(graph.anchors))
    index = {a: i for i, a in enumerate(anchor_ids)}
    object_ids = tuple(sorted(o for o in graph.objects if graph.anchors_of(o)))
    coverage = tuple(frozenset(index[a] for a in graph.anchors_of(o)) for o in object_ids)
    required = tuple(min(r, len(c)) for c in coverage)
    costs = tuple(graph.anchors[a].cost for a in anchor_ids)
    return MulticoverInstance(costs, coverage, required, r, anchor_ids, object_ids)


def _anchor_objects(inst: MulticoverInstance) -> list[list[int]]:
    per_anchor = [[] for _ in range(inst.n_anchors)]
    for j, cov in enumerate(inst.coverage):
        for i in cov:
            per_anchor[i].append(j)
    return per_anchor


def solve_exact(inst: MulticoverInstance, exact_limit: int = 24) -> SelectionResult:
    """Branch and bound over anchors in index order (include branch first).

    The lower bound is the larger of two relaxations on the residual demand:
    the most expensive single object (its cheapest remaining covers), and a
    cost-sharing bound where each anchor's cost is split evenly over the
    still-demanding objects it covers. Among equal-cost optima the
    lexicographically smallest sorted index tuple is returned.
    """
    m = inst.n_anchors
    if m > exact_limit:
        raise InstanceTooLarge(f"{m} anchors exceed exact_limit={exact_limit}")
    if not inst.coverage:
        return SelectionResult(frozenset(), 0.0, True)

    costs = inst.anchor_costs
    per_anchor = _anchor_objects(inst)
    cover_lists = [sorted(cov) for cov in inst.coverage]
    eps = 1e-9 * max(1.0, sum(costs))

    best_cost = math.inf
    best_sel: tuple[int, ...] | None = None
    demand = list(inst.required)
    chosen: list[int] = []

    def lower_bound(i: int) -> float:
        # anchors with index >= i are still undecided
        per_obj_max = 0.0
        shared = 0.0
        share_deg = [0] * m
        for a in range(i, m):
            share_deg[a] = sum(1 for j in per_anchor[a] if demand[j] > 0)
        for j, d in enumerate(demand):
            if d <= 0:
                continue
            avail = [a for a in cover_lists[j] if a >= i]
            if len(avail) < d:
                return math.inf
            plain = sorted(costs[a] for a in avail)[:d]
            per_obj_max = max(per_obj_max, sum(plain))
            shared += sum(sorted(costs[a] / share_deg[a] for a in avail)[:d])
        return max(per_obj_max, shared)

    def search(i: int, cost: float) -> None:
        nonlocal best_cost, best_sel
        if all(d <= 0 for d in demand):
            sel = tuple(chosen)
            if cost < best_cost - eps or (cost <= best_cost + eps and sel < best_sel):
                best_cost, best_sel = cost, sel
            return
        if i >= m:
            return
        lb = cost + lower_bound(i)
        if lb > best_cost + eps:
            return
        if lb >= best_cost - eps and best_sel is not None and tuple(chosen) > best_sel:
            return
        useful = any(demand[j] > 0 for j in per_anchor[i])
        if useful:
            chosen.append(i)
            for j in per_anchor[i]:
                demand[j] -= 1
            search(i + 1, cost + costs[i])
            for j in per_anchor[i]:
                demand[j] += 1
            chosen.pop()
        search(i + 1, cost)

    search(0, 0.0)
    assert best_sel is not None, "instance infeasible despite clamped demands"
    return SelectionResult(frozenset(best_sel), inst.cost(best_sel), True)


def solve_greedy(inst: MulticoverInstance) -> SelectionResult:
    """Repeatedly take the anchor with the most unmet demand per unit cost."""
    demand = list(inst.required)
    per_anchor = _anchor_objects(inst)
    selected: set[int] = set()
    while any(d > 0 for d in demand):
        best, best_ratio = None, 0.0
        for i in range(inst.n_anchors):
            if i in selected:
                continue
            gain = sum(1 for j in per_anchor[i] if demand[j] > 0)
            ratio = gain / inst.anchor_costs[i]
            if gain and ratio > best_ratio:
                best, best_ratio = i, ratio
        assert best is not None, "greedy stalled on a feasible instance"
        selected.add(best)
        for j in per_anchor[best]:
            demand[j] -= 1
    return SelectionResult(frozenset(selected), inst.cost(selected), False)


def select_anchors(inst: MulticoverInstance, exact_limit: int = 24) -> SelectionResult:
    if inst.n_anchors <= exact_limit:
        return solve_exact(inst, exact_limit)
    return solve_greedy(inst)


def compact(graph: CognitiveMemoryGraph, r: int = 2, exact_limit: int = 24) -> SelectionResult:
    """Drop every anchor not in the multicover selection (in place).

    Anchors that observe nothing are never selected, so they are removed too.
    Object nodes are untouched.
    """
    inst = build_instance(graph, r)
    result = select_anchors(inst, exact_limit)
    keep = {inst.anchor_ids[i] for i in result.selected}
    drop = set(graph.anchors) - keep
    graph.remove_anchors(drop)
    return result
