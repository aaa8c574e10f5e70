"""Grid A* and a rotate-then-move path follower."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .world import FREE, OccupancyGrid, Pose, supercover_cells, wrap_angle

SQRT2 = math.sqrt(2.0)

_MOVES = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


class Unreachable(Exception):
    pass


@dataclass(frozen=True)
class Path:
    waypoints: tuple[tuple[float, float], ...]
    total_length: float
    direct: bool = False  # straight-line pursuit instead of grid steps

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("a path needs at least one waypoint")

    @property
    def goal(self) -> tuple[float, float]:
        return self.waypoints[-1]


@dataclass(frozen=True)
class PlannerConfig:
    snap_radius: float = 0.5
    direct_distance: float = 2.0
    capture_radius: float = 0.05
    align_tolerance: float = math.radians(50)


def polyline_length(points) -> float:
    return math.fsum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(points, points[1:]))


def nearest_free_cell(grid: OccupancyGrid, point, radius: float):
    """Free cell whose centre is closest to ``point`` within ``radius``; ties by (iy, ix)."""
    res = grid.resolution
    r = int(math.ceil(radius / res)) + 1
    cx, cy = grid.cell_of(point)
    x0, x1 = max(cx - r, 0), min(cx + r, grid.width - 1)
    y0, y1 = max(cy - r, 0), min(cy + r, grid.height - 1)
    if x0 > x1 or y0 > y1:
        return None
    window = grid.cells[y0:y1 + 1, x0:x1 + 1]
    ys, xs = np.nonzero(window == FREE)
    if len(xs) == 0:
        return None
    d2 = ((xs + x0 + 0.5) * res - point[0]) ** 2 + ((ys + y0 + 0.5) * res - point[1]) ** 2
    ok = d2 <= radius ** 2 + 1e-12
    if not ok.any():
        return None
    idx = np.nonzero(ok)[0]
    best = idx[np.argmin(d2[idx])]
    return int(xs[best] + x0), int(ys[best] + y0)


def astar_cells(passable: np.ndarray, start, goal) -> list[tuple[int, int]] | None:
    """8-connected A* without corner cutting; diagonal steps cost sqrt(2).

    ``passable`` is a boolean ``[iy, ix]`` mask. Uses the octile distance,
    which is admissible and consistent for this move set.
    """
    h, w = passable.shape
    sx, sy = start
    gx, gy = goal
    if not (passable[sy, sx] and passable[gy, gx]):
        return None
    flat = passable.ravel().tolist()
    start_i, goal_i = sy * w + sx, gy * w + gx
    g = {start_i: 0.0}
    parent = {start_i: -1}
    closed = set()

    def heur(i):
        dx, dy = abs(i % w - gx), abs(i // w - gy)
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    heap = [(heur(start_i), 0.0, start_i)]
    while heap:
        _, _, i = heapq.heappop(heap)
        if i in closed:
            continue
        gi = g[i]
        if i == goal_i:
            break
        closed.add(i)
        x, y = i % w, i // w
        for dx, dy, cost in _MOVES:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            j = ny * w + nx
            if not flat[j] or j in closed:
                continue
            if dx and dy and not (flat[y * w + nx] and flat[ny * w + x]):
                continue
            ng = gi + cost
            if ng < g.get(j, math.inf) - 1e-12:
                g[j] = ng
                parent[j] = i
                heapq.heappush(heap, (ng + heur(j), -ng, j))
    if goal_i not in parent:
        return None
    out = []
    i = goal_i
    while i != -1:
        out.append((i % w, i // w))
        i = parent[i]
    out.reverse()
    return out


def distance_to_mask(passable: np.ndarray, start, goal_mask: np.ndarray) -> float:
    """Cell-unit Dijkstra distance from ``start`` to the nearest cell of ``goal_mask``.

    Same move set as ``astar_cells``; returns ``inf`` when no goal cell is reachable.
    """
    h, w = passable.shape
    sx, sy = start
    if not passable[sy, sx]:
        return math.inf
    flat = passable.ravel().tolist()
    goals = goal_mask.ravel().tolist()
    start_i = sy * w + sx
    dist = {start_i: 0.0}
    heap = [(0.0, start_i)]
    done = set()
    while heap:
        d, i = heapq.heappop(heap)
        if i in done:
            continue
        if goals[i]:
            return d
        done.add(i)
        x, y = i % w, i // w
        for dx, dy, cost in _MOVES:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            j = ny * w + nx
            if not flat[j] or j in done:
                continue
            if dx and dy and not (flat[y * w + nx] and flat[ny * w + x]):
                continue
            nd = d + cost
            if nd < dist.get(j, math.inf) - 1e-12:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
    return math.inf


def plan_path(grid: OccupancyGrid, start, goal, cfg: PlannerConfig = PlannerConfig()) -> Path:
    """Shortest 8-connected path over Free cells, snapping a non-Free goal."""
    s_cell = grid.cell_of(start)
    if not grid.cell_in_bounds(s_cell) or grid.state(s_cell) != FREE:
        raise Unreachable(f"start {start} is not on a free cell")
    g_cell = grid.cell_of(goal)
    if not grid.cell_in_bounds(g_cell) or grid.state(g_cell) != FREE:
        g_cell = nearest_free_cell(grid, goal, cfg.snap_radius)
        if g_cell is None:
            raise Unreachable(f"no free cell within {cfg.snap_radius} m of goal {goal}")
    cells = astar_cells(grid.cells == FREE, s_cell, g_cell)
    if cells is None:
        raise Unreachable(f"no path from {start} to {goal}")
    pts = tuple(grid.center_of(c) for c in cells)
    return Path(pts, polyline_length(pts))


def segment_clear(grid: OccupancyGrid, a, b) -> bool:
    """All cells touched by the segment are known Free."""
    for cell in supercover_cells(a, b, grid.resolution):
        if not grid.cell_in_bounds(cell) or grid.state(cell) != FREE:
            return False
    return True


def plan_motion(grid: OccupancyGrid, start, goal, cfg: PlannerConfig = PlannerConfig()) -> Path:
    """Direct pursuit for near, visible goals; A* waypoints otherwise."""
    if math.hypot(goal[0] - start[0], goal[1] - start[1]) <= cfg.direct_distance:
        g_cell = grid.cell_of(goal)
        if grid.cell_in_bounds(g_cell) and grid.state(g_cell) == FREE and segment_clear(grid, start, goal):
            pts = (tuple(start), tuple(goal))
            return Path(pts, polyline_length(pts), direct=True)
    return plan_path(grid, start, goal, cfg)


@dataclass(frozen=True)
class ControlStep:
    v: float
    omega: float
    pose: Pose
    index: int  # next waypoint to reach
    arrived: bool
    blocked: bool = False


def step_controller(agent: Pose, path: Path, motion, grid: OccupancyGrid | None = None,
                    index: int = 0, dt: float = 1.0,
                    cfg: PlannerConfig = PlannerConfig()) -> ControlStep:
    """One control tick along ``path``.

    Rotates in place while the heading error to the next waypoint exceeds
    ``cfg.align_tolerance``; otherwise moves along the polyline up to
    ``v_max * dt``, continuing round corners while the turn budget lasts.
    With a grid, every swept cell must be known Free, else the step stops
    short and reports ``blocked``.
    """
    wps = path.waypoints
    pos = agent.position
    heading = agent.heading
    i = index
    while i < len(wps) and math.hypot(wps[i][0] - pos[0], wps[i][1] - pos[1]) <= cfg.capture_radius:
        i += 1
    if i >= len(wps):
        return ControlStep(0.0, 0.0, Pose(pos, heading), len(wps), True)

    turn_budget = motion.xi_dot_max * dt
    desired = math.atan2(wps[i][1] - pos[1], wps[i][0] - pos[0])
    err = wrap_angle(desired - heading)
    if abs(err) > cfg.align_tolerance or abs(err) > turn_budget:
        rot = max(-turn_budget, min(turn_budget, err))
        new = Pose(pos, heading + rot)
        return ControlStep(0.0, rot / dt, new, i, False)

    heading = desired
    turned = abs(err)
    budget = motion.v_max * dt
    travelled = 0.0
    blocked = False
    while budget > 1e-12 and i < len(wps):
        tx, ty = wps[i]
        seg = math.hypot(tx - pos[0], ty - pos[1])
        step = min(seg, budget)
        end = (pos[0] + (tx - pos[0]) / seg * step, pos[1] + (ty - pos[1]) / seg * step) if seg > 0 else pos
        if grid is not None and not segment_clear(grid, pos, end):
            blocked = True
            break
        pos = end
        travelled += step
        budget -= step
        if step < seg - 1e-12:
            break
        pos = (tx, ty)
        i += 1
        if i < len(wps):
            nxt = math.atan2(wps[i][1] - pos[1], wps[i][0] - pos[0])
            turn = abs(wrap_angle(nxt - heading))
            if turn > cfg.align_tolerance or turned + turn > turn_budget:
                break
            heading = nxt
            turned += turn
    vel = ((pos[0] - agent.x) / dt, (pos[1] - agent.y) / dt)
    omega = wrap_angle(heading - agent.heading) / dt
    new = Pose(pos, heading, vel)
    return ControlStep(travelled / dt, omega, new, i, i >= len(wps), blocked)
