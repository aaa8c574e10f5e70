"""Goal selection as a weighted traveling repairman problem.

Node 0 is the robot; nodes ``1..n`` are frontier viewpoints. A visiting
order ``pi`` costs ``sum_i W[pi_i] * C_i`` where ``C_i`` is the travel time
accumulated up to the ``i``-th visit. Returning to node 0 is free.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .world import Frontier, Pose, wrap_angle

WTRP_FORMAT = "semnav-wtrp"


class InvariantError(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


class NoFrontier(Exception):
    pass


@dataclass(frozen=True)
class MotionConfig:
    v_max: float = 0.5
    xi_dot_max: float = math.pi / 2
    w_c: float = 0.5
    w_f: float = 2.0
    h_max: float = 5.0
    beta: float = 3.0
    epsilon_v: float = 1e-3

    def __post_init__(self):
        for name in ("v_max", "xi_dot_max", "h_max", "epsilon_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("w_c", "w_f", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class WtrpInstance:
    weights: np.ndarray
    cost_matrix: np.ndarray
    metadata: dict | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = np.array(self.cost_matrix, dtype=float)
        w.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cost_matrix", m)

    @property
    def n(self) -> int:
        return len(self.weights)

    def validate(self, tol: float = 1e-9) -> "WtrpInstance":
        """Raise ``InvariantError`` naming the first violated invariant."""
        n, m, w = self.n, self.cost_matrix, self.weights
        if n < 1:
            raise InvariantError("instance needs at least one candidate")
        if m.shape != (n + 1, n + 1):
            raise InvariantError(f"cost matrix must be {(n + 1, n + 1)}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvariantError("cost matrix entries must be finite")
        if np.any(m < 0):
            raise InvariantError("cost matrix entries must be non-negative")
        if np.any(np.abs(m[1:, 0]) > tol):
            raise InvariantError("return legs M[k][0] must be zero")
        inner = m[1:, 1:]
        if np.any(np.abs(inner - inner.T) > tol * np.maximum(1.0, np.abs(inner))):
            raise InvariantError("candidate-to-candidate costs must be symmetric")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InvariantError("weights must be positive and finite")
        return self

    def to_dict(self) -> dict:
        return {"format": WTRP_FORMAT, "version": 1, "weights": self.weights.tolist(),
                "matrix": self.cost_matrix.tolist(), "metadata": self.metadata or {}}

    @classmethod
    def from_dict(cls, data: dict) -> "WtrpInstance":
        if data.get("format") != WTRP_FORMAT:
            raise InvariantError("not a semnav-wtrp document")
        try:
            w = np.asarray(data["weights"], dtype=float)
            m = np.asarray(data["matrix"], dtype=float)
        except (KeyError, ValueError, TypeError) as exc:
            raise InvariantError(f"malformed instance: {exc}") from exc
        if m.ndim != 2:
            raise InvariantError("matrix must be two-dimensional")
        return cls(w, m, data.get("metadata") or {})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "WtrpInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    cumulative_costs: tuple[float, ...]
    objective: float
    optimal: bool


def tour_objective(inst: WtrpInstance, order) -> tuple[tuple[float, ...], float]:
    m, w = inst.cost_matrix, inst.weights
    prev, c, obj = 0, 0.0, 0.0
    cum = []
    for k in order:
        c += m[prev, k]
        obj += w[k - 1] * c
        cum.append(c)
        prev = k
    return tuple(cum), obj


def make_tour(inst: WtrpInstance, order, optimal: bool) -> Tour:
    cum, obj = tour_objective(inst, order)
    return Tour(tuple(int(k) for k in order), cum, obj, optimal)


# --------------------------------------------------------------------------
# instance assembly

def utility_weights(scores, beta: float) -> np.ndarray:
    """Min-max normalise then ``exp(beta * s) / exp(beta)``; equal scores all map to 1."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("need at least one score")
    lo, hi = s.min(), s.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        norm = np.ones_like(s)
    else:
        norm = (s - lo) / (hi - lo)
    return np.exp(beta * (norm - 1.0))


def nominal_cost(a: Pose, b: Pose, cfg: MotionConfig = MotionConfig()) -> float:
    d = math.hypot(a.x - b.x, a.y - b.y)
    turn = abs(wrap_angle(a.heading - b.heading))
    return max(d / cfg.v_max, turn / cfg.xi_dot_max)


def consistency_cost(candidate, agent: Pose, epsilon_v: float = 1e-3) -> float:
    """Angle between the displacement to ``candidate`` and the agent's velocity."""
    vx, vy = agent.velocity
    speed = math.hypot(vx, vy)
    dx, dy = candidate[0] - agent.x, candidate[1] - agent.y
    dist = math.hypot(dx, dy)
    if speed < epsilon_v or dist < 1e-12:
        return 0.0
    cos = (dx * vx + dy * vy) / (dist * speed)
    return math.acos(max(-1.0, min(1.0, cos)))


def structure_cost(frontier: Frontier, cfg: MotionConfig = MotionConfig()) -> float:
    return min(1.0, max(0.0, frontier.openness / cfg.h_max))


def build_instance(agent: Pose, frontiers: list[Frontier], scores, cfg: MotionConfig = MotionConfig()) -> WtrpInstance:
    n = len(frontiers)
    if n < 1:
        raise NoFrontier("no candidate frontiers")
    weights = utility_weights(scores, cfg.beta)
    m = np.zeros((n + 1, n + 1))
    for k, f in enumerate(frontiers, start=1):
        vp = f.viewpoint
        m[0, k] = (nominal_cost(agent, vp, cfg)
                   + cfg.w_c * consistency_cost(vp.position, agent, cfg.epsilon_v)
                   + cfg.w_f * structure_cost(f, cfg))
    for r in range(1, n + 1):
        for s in range(r + 1, n + 1):
            m[r, s] = m[s, r] = nominal_cost(frontiers[r - 1].viewpoint, frontiers[s - 1].viewpoint, cfg)
    return WtrpInstance(weights, m)


# --------------------------------------------------------------------------
# exact solver

def solve_exact(inst: WtrpInstance, exact_limit: int = 12) -> Tour:
    """Subset dynamic program, optimal; ties go to the lexicographically smallest order.

    ``f[R, c]`` is the cheapest way to visit every candidate in bitmask
    ``R`` starting from node ``c``. Each leg is charged the total weight of
    the candidates still unvisited, which sums to the weighted latency.
    """
    n = inst.n
    if n > exact_limit:
        raise InstanceTooLarge(f"n={n} exceeds exact_limit={exact_limit}")
    m, w = inst.cost_matrix, inst.weights
    size = 1 << n
    masks = np.arange(size)
    bits = (masks[:, None] >> np.arange(n)) & 1
    wsum = bits @ w
    popcount = bits.sum(axis=1)
    f = np.zeros((size, n + 1))
    for p in range(1, n + 1):
        layer = masks[popcount == p]
        best = np.full((len(layer), n + 1), np.inf)
        for j in range(n):
            has = (layer >> j) & 1 == 1
            sub = layer[has] ^ (1 << j)
            vals = m[:, j + 1][None, :] * wsum[layer[has]][:, None] + f[sub, j + 1][:, None]
            np.minimum(best[has], vals, out=vals)
            best[has] = vals
        f[layer] = best

    order = []
    rem, cur = size - 1, 0
    while rem:
        cands = [j for j in range(n) if rem >> j & 1]
        vals = [m[cur, j + 1] * wsum[rem] + f[rem ^ (1 << j), j + 1] for j in cands]
        lo = min(vals)
        tol = 1e-12 * max(1.0, abs(lo))
        j = next(j for j, v in zip(cands, vals) if v <= lo + tol)
        order.append(j + 1)
        rem ^= 1 << j
        cur = j + 1
    return make_tour(inst, order, True)


def solve_bruteforce(inst: WtrpInstance) -> Tour:
    best = None
    for perm in itertools.permutations(range(1, inst.n + 1)):
        _, obj = tour_objective(inst, perm)
        if best is None or obj < best[1]:
            best = (perm, obj)
    return make_tour(inst, best[0], True)


# --------------------------------------------------------------------------
# heuristic solver

@lru_cache(maxsize=64)
def _neighbourhood(n: int) -> np.ndarray:
    """Position permutations for adjacent swaps then or-opt moves (segments of 1-3)."""
    base = list(range(n))
    moves = []
    for i in range(n - 1):
        p = base[:]
        p[i], p[i + 1] = p[i + 1], p[i]
        moves.append(p)
    seen = {tuple(p) for p in moves}
    for length in (1, 2, 3):
        for i in range(n - length + 1):
            seg = base[i:i + length]
            rest = base[:i] + base[i + length:]
            for pos in range(len(rest) + 1):
                p = rest[:pos] + seg + rest[pos:]
                t = tuple(p)
                if t == tuple(base) or t in seen:
                    continue
                seen.add(t)
                moves.append(p)
    if not moves:
        return np.zeros((0, n), dtype=np.int64)
    return np.array(moves, dtype=np.int64)


def _batch_objective(inst: WtrpInstance, orders: np.ndarray) -> np.ndarray:
    k = orders.shape[0]
    nodes = np.concatenate([np.zeros((k, 1), dtype=np.int64), orders], axis=1)
    legs = inst.cost_matrix[nodes[:, :-1], nodes[:, 1:]]
    return (np.cumsum(legs, axis=1) * inst.weights[orders - 1]).sum(axis=1)


def _insertion_construction(inst: WtrpInstance) -> list[int]:
    order: list[int] = []
    remaining = list(range(1, inst.n + 1))
    while remaining:
        best = None
        for k in remaining:
            for pos in range(len(order) + 1):
                trial = order[:pos] + [k] + order[pos:]
                sub_w = inst.weights[np.array(trial) - 1]
                nodes = [0] + trial
                legs = inst.cost_matrix[nodes[:-1], nodes[1:]]
                obj = float(np.dot(np.cumsum(legs), sub_w))
                if best is None or obj < best[0] - 1e-12:
                    best = (obj, k, pos)
        _, k, pos = best
        order.insert(pos, k)
        remaining.remove(k)
    return order


def _local_search(inst: WtrpInstance, order: np.ndarray) -> tuple[np.ndarray, float]:
    moves = _neighbourhood(len(order))
    cur = _batch_objective(inst, order[None, :])[0]
    if len(moves) == 0:
        return order, cur
    while True:
        cands = order[moves]
        objs = _batch_objective(inst, cands)
        better = np.nonzero(objs < cur - 1e-12 * max(1.0, abs(cur)))[0]
        if len(better) == 0:
            return order, cur
        first = better[0]
        order, cur = cands[first], objs[first]


def solve_heuristic(inst: WtrpInstance, seed: int = 0, restarts: int = 16) -> Tour:
    """Insertion construction, then first-improvement swap/or-opt descent.

    ``restarts`` rounds of seeded random segment moves followed by descent
    try to escape local optima; only improvements are kept.
    """
    n = inst.n
    order = np.array(_insertion_construction(inst), dtype=np.int64)
    if n <= 1:
        return make_tour(inst, order.tolist(), True)
    order, cur = _local_search(inst, order)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        trial = order.copy()
        for _ in range(2):
            i, j = sorted(rng.choice(n, size=2, replace=False))
            seg = trial[i:j + 1].copy()
            rest = np.concatenate([trial[:i], trial[j + 1:]])
            pos = int(rng.integers(0, len(rest) + 1))
            trial = np.concatenate([rest[:pos], seg, rest[pos:]])
        trial, obj = _local_search(inst, trial)
        if obj < cur - 1e-12 * max(1.0, abs(cur)):
            order, cur = trial, obj
    return make_tour(inst, order.tolist(), False)


def solve(inst: WtrpInstance, exact_limit: int = 12, seed: int = 0) -> Tour:
    if inst.n <= exact_limit:
        return solve_exact(inst, exact_limit)
    return solve_heuristic(inst, seed)


# --------------------------------------------------------------------------
# goal selection

@dataclass(frozen=True)
class GoalSelection:
    index: int  # into the frontier list
    viewpoint: Pose
    order: tuple[int, ...]  # frontier indices in visiting order
    tour: Tour | None
    instance: WtrpInstance | None


def select_goal(agent: Pose, frontiers: list[Frontier], scores, cfg: MotionConfig = MotionConfig(),
                exact_limit: int = 12, greedy: bool = False, seed: int = 0) -> GoalSelection:
    """Mid-term goal: first stop of the WTRP tour, or the argmax score when ``greedy``."""
    if not frontiers:
        raise NoFrontier("no frontiers left")
    if greedy:
        s = np.asarray(scores, dtype=float)
        order = tuple(int(i) for i in np.argsort(-s, kind="stable"))
        return GoalSelection(order[0], frontiers[order[0]].viewpoint, order, None, None)
    inst = build_instance(agent, frontiers, scores, cfg)
    tour = solve(inst, exact_limit, seed)
    order = tuple(k - 1 for k in tour.order)
    return GoalSelection(order[0], frontiers[order[0]].viewpoint, order, tour, inst)
