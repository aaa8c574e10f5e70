"""Occupancy grid, agent pose, sensing and frontier extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

FREE = 0
OCCUPIED = 1
UNKNOWN = 2

NO_ANCHOR = -1


class BoundsError(ValueError):
    pass


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float]
    heading: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]

    def distance_to(self, point) -> float:
        return math.hypot(point[0] - self.position[0], point[1] - self.position[1])


@dataclass(frozen=True)
class SensorSpec:
    """Depth range feeds the map; the wider image range only feeds symbolic views."""

    depth_range: float = 2.5
    fov: float = 2 * math.pi
    image_range: float = 6.0


class OccupancyGrid:
    """Three-state grid indexed as ``cells[iy, ix]``.

    ``anchor_stamp`` records, per cell, the visual anchor that was current when
    the cell first became known. Frontiers use it to find the observation
    that revealed their boundary.
    """

    def __init__(self, width: int, height: int, resolution: float, cells=None, anchor_stamp=None):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if width <= 0 or height <= 0:
            raise ValueError("grid dimensions must be positive")
        self._resolution = float(resolution)
        self.width = int(width)
        self.height = int(height)
        if cells is None:
            cells = np.full((self.height, self.width), UNKNOWN, dtype=np.int8)
        cells = np.asarray(cells, dtype=np.int8)
        if cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {cells.shape} != {(self.height, self.width)}")
        if not np.isin(cells, (FREE, OCCUPIED, UNKNOWN)).all():
            raise ValueError("cell states must be FREE, OCCUPIED or UNKNOWN")
        self.cells = cells
        if anchor_stamp is None:
            anchor_stamp = np.full((self.height, self.width), NO_ANCHOR, dtype=np.int64)
        self.anchor_stamp = anchor_stamp
        self.version = 0

    @property
    def resolution(self) -> float:
        return self._resolution

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self._resolution, self.height * self._resolution

    def in_bounds(self, point) -> bool:
        w, h = self.extent
        return 0.0 <= point[0] < w and 0.0 <= point[1] < h

    def cell_of(self, point) -> tuple[int, int]:
        return int(math.floor(point[0] / self._resolution)), int(math.floor(point[1] / self._resolution))

    def center_of(self, cell) -> tuple[float, float]:
        return (cell[0] + 0.5) * self._resolution, (cell[1] + 0.5) * self._resolution

    def cell_in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def state(self, cell) -> int:
        return int(self.cells[cell[1], cell[0]])

    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.cells == UNKNOWN))

    def copy(self) -> "OccupancyGrid":
        """Independent snapshot, safe to hand to reader threads."""
        out = OccupancyGrid(self.width, self.height, self._resolution,
                            self.cells.copy(), self.anchor_stamp.copy())
        out.version = self.version
        out.cells.flags.writeable = False
        out.anchor_stamp.flags.writeable = False
        return out


# --------------------------------------------------------------------------
# sensing

@lru_cache(maxsize=16)
def _disk_offsets(radius_cells: int):
    r = radius_cells
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dx.ravel(), dy.ravel()


def visible_cells(occupied: np.ndarray, position, heading: float, max_range: float,
                  fov: float, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Cells whose centres are within range/FOV and not occluded by occupied cells.

    ``occupied`` is the ground-truth obstacle mask. Occlusion is tested by
    dense sampling (at most a quarter cell apart) along the segment from the
    sensor to the nearest point of each cell; the target cell itself may be
    occupied.
    """
    h, w = occupied.shape
    px, py = position
    acx, acy = int(math.floor(px / resolution)), int(math.floor(py / resolution))
    r_cells = int(math.ceil(max_range / resolution)) + 1
    dx, dy = _disk_offsets(r_cells)
    cx = acx + dx
    cy = acy + dy
    keep = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    cx, cy = cx[keep], cy[keep]
    tx = (cx + 0.5) * resolution
    ty = (cy + 0.5) * resolution
    ddx, ddy = tx - px, ty - py
    dist = np.hypot(ddx, ddy)
    keep = dist <= max_range + 1e-9
    if fov < 2 * math.pi - 1e-9:
        bearing = np.arctan2(ddy, ddx) - heading
        bearing = np.arctan2(np.sin(bearing), np.cos(bearing))
        keep &= (np.abs(bearing) <= fov / 2 + 1e-9) | (dist < 1e-9)
    cx, cy = cx[keep], cy[keep]
    # aim at the nearest point of the cell so wall faces seen at grazing
    # angles are not hidden behind their own neighbours
    inset = 1e-3 * resolution
    ddx = np.clip(px, cx * resolution + inset, (cx + 1) * resolution - inset) - px
    ddy = np.clip(py, cy * resolution + inset, (cy + 1) * resolution - inset) - py
    n_samples = 4 * r_cells + 2
    frac = np.linspace(0.0, 1.0, n_samples)[None, :]
    sx = np.floor((px + ddx[:, None] * frac) / resolution).astype(np.int64)
    sy = np.floor((py + ddy[:, None] * frac) / resolution).astype(np.int64)
    np.clip(sx, 0, w - 1, out=sx)
    np.clip(sy, 0, h - 1, out=sy)
    is_target = (sx == cx[:, None]) & (sy == cy[:, None])
    blocked = (occupied[sy, sx] & ~is_target).any(axis=1)
    vis = ~blocked
    return cx[vis], cy[vis]


def line_of_sight(occupied: np.ndarray, start, end, resolution: float) -> bool:
    """True when no occupied cell lies strictly between ``start`` and ``end``."""
    end_cell = (int(math.floor(end[0] / resolution)), int(math.floor(end[1] / resolution)))
    for cell in supercover_cells(start, end, resolution):
        if cell == end_cell:
            continue
        ix, iy = cell
        if not (0 <= iy < occupied.shape[0] and 0 <= ix < occupied.shape[1]):
            return False
        if occupied[iy, ix]:
            return False
    return True


def integrate_observation(grid: OccupancyGrid, pose: Pose, sensor: SensorSpec,
                          truth: np.ndarray, anchor_id: int = NO_ANCHOR) -> tuple[OccupancyGrid, np.ndarray]:
    """Reveal ground truth for every visible cell.

    ``truth`` is the boolean obstacle mask of the scene. Returns the grid
    (updated in place) and an ``(k, 2)`` array of ``(ix, iy)`` cells that
    went from Unknown to known in this call. Newly known cells are stamped
    with ``anchor_id``.
    """
    if not grid.in_bounds(pose.position):
        raise BoundsError(f"pose {pose.position} outside grid of extent {grid.extent}")
    cx, cy = visible_cells(truth, pose.position, pose.heading, sensor.depth_range,
                           sensor.fov, grid.resolution)
    before = grid.cells[cy, cx]
    new = before == UNKNOWN
    grid.cells[cy, cx] = np.where(truth[cy, cx], OCCUPIED, FREE).astype(np.int8)
    newly = np.stack([cx[new], cy[new]], axis=1)
    if len(newly):
        grid.anchor_stamp[newly[:, 1], newly[:, 0]] = anchor_id
        grid.version += 1
    return grid, newly


# --------------------------------------------------------------------------
# ray traversal

def supercover_cells(start, end, resolution: float) -> list[tuple[int, int]]:
    """Every cell touched by the segment ``start -> end`` in travel order.

    Grid-line traversal; when the segment passes exactly through a cell
    corner both side cells are emitted so nothing leaks diagonally.
    """
    x0, y0 = start[0] / resolution, start[1] / resolution
    x1, y1 = end[0] / resolution, end[1] / resolution
    ix, iy = int(math.floor(x0)), int(math.floor(y0))
    ex, ey = int(math.floor(x1)), int(math.floor(y1))
    cells = [(ix, iy)]
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0:
        next_x = ix + 1 if dx > 0 else ix
        t_max_x = (next_x - x0) / dx
        t_delta_x = abs(1.0 / dx)
    else:
        t_max_x = t_delta_x = math.inf
    if dy != 0:
        next_y = iy + 1 if dy > 0 else iy
        t_max_y = (next_y - y0) / dy
        t_delta_y = abs(1.0 / dy)
    else:
        t_max_y = t_delta_y = math.inf
    n_steps = abs(ex - ix) + abs(ey - iy)
    while n_steps > 0 and (ix, iy) != (ex, ey):
        if abs(t_max_x - t_max_y) < 1e-12:
            if t_max_x > 1.0:
                break
            cells.append((ix + step_x, iy))
            cells.append((ix, iy + step_y))
            ix += step_x
            iy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
            n_steps -= 2
        elif t_max_x < t_max_y:
            if t_max_x > 1.0:
                break
            ix += step_x
            t_max_x += t_delta_x
            n_steps -= 1
        else:
            if t_max_y > 1.0:
                break
            iy += step_y
            t_max_y += t_delta_y
            n_steps -= 1
        cells.append((ix, iy))
    return cells


def raycast_openness(grid: OccupancyGrid, viewpoint: Pose, center, h_max: float,
                     direction=None) -> float:
    """Depth of the unexplored pocket seen from ``viewpoint`` through ``center``.

    The ray leaves the viewpoint cell, passes over the contiguous run of
    Free cells on the known side and then continues through ``center``. The
    first observed cell after that (any Occupied cell counts at once) is the
    hit; the result is the distance from the hit cell centre to ``center``,
    truncated at ``h_max``. No hit, or a zero-length ray, gives ``h_max``.
    ``direction`` overrides the ray direction (used when the viewpoint sits
    on the centre and the direction would be undefined).
    """
    if not grid.in_bounds(viewpoint.position) or not grid.in_bounds(center):
        raise BoundsError("viewpoint and center must lie inside the grid")
    vx, vy = viewpoint.position
    length = math.hypot(center[0] - vx, center[1] - vy)
    if direction is not None:
        norm = math.hypot(direction[0], direction[1])
        if norm < 1e-12:
            return float(h_max)
        ux, uy = direction[0] / norm, direction[1] / norm
    elif length < 1e-9:
        return float(h_max)
    else:
        ux, uy = (center[0] - vx) / length, (center[1] - vy) / length
    reach = length + h_max
    end = (vx + ux * reach, vy + uy * reach)
    known_side = True
    for k, cell in enumerate(supercover_cells((vx, vy), end, grid.resolution)):
        if not grid.cell_in_bounds(cell):
            break
        state = grid.state(cell)
        if k == 0:
            continue
        if known_side:
            if state == FREE:
                continue
            known_side = False
            if state == UNKNOWN:
                continue
        elif state == UNKNOWN:
            continue
        cx, cy = grid.center_of(cell)
        return float(min(h_max, math.hypot(cx - center[0], cy - center[1])))
    return float(h_max)


# --------------------------------------------------------------------------
# frontiers

@dataclass(frozen=True)
class Frontier:
    cells: tuple[tuple[int, int], ...]
    centroid: tuple[float, float]
    viewpoint: Pose
    anchor_id: int | None = None
    openness: float = 0.0

    @property
    def size(self) -> int:
        return len(self.cells)

    def key(self) -> tuple[int, int]:
        """Stable identity used for blacklisting: the first member cell."""
        return self.cells[0]


_FOUR = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
_EIGHT = np.ones((3, 3), dtype=bool)


def frontier_mask(cells: np.ndarray) -> np.ndarray:
    """Free cells with at least one 4-adjacent Unknown cell."""
    unknown = cells == UNKNOWN
    near_unknown = ndimage.binary_dilation(unknown, structure=_FOUR, border_value=0)
    return (cells == FREE) & near_unknown


def _outward_normal(unknown: np.ndarray, xs, ys):
    """Mean offset from frontier cells to their 4-adjacent Unknown cells, or None."""
    h, w = unknown.shape
    nx = ny = 0.0
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ax, ay = xs + dx, ys + dy
        ok = (ax >= 0) & (ax < w) & (ay >= 0) & (ay < h)
        hits = np.count_nonzero(unknown[ay[ok], ax[ok]])
        nx += dx * hits
        ny += dy * hits
    if math.hypot(nx, ny) < 1e-9:
        return None
    return (nx, ny)


def _near_cluster(pool_cx, pool_cy, xs, ys, res, reach):
    """Indices of pool cells within ``reach`` of any cluster cell centre."""
    mx, my = (xs + 0.5) * res, (ys + 0.5) * res
    box = ((pool_cx >= mx.min() - reach) & (pool_cx <= mx.max() + reach)
           & (pool_cy >= my.min() - reach) & (pool_cy <= my.max() + reach))
    idx = np.nonzero(box)[0]
    if len(idx) == 0:
        return idx
    d, _ = cKDTree(np.column_stack([mx, my])).query(np.column_stack([pool_cx[idx], pool_cy[idx]]),
                                                     distance_upper_bound=reach + 1e-9)
    return idx[np.isfinite(d)]


def extract_frontiers(grid: OccupancyGrid, robot_radius: float | None = None,
                      h_max: float = 5.0, reach: float = 0.5) -> list[Frontier]:
    """Cluster frontier cells (8-connected) and attach viewpoint, anchor, openness.

    The viewpoint is the safe Free cell nearest the centroid among those within
    ``reach`` of some member cell. Without that restriction an arc-shaped
    cluster (the rim of a disc seen from inside a big room) gets a viewpoint
    back at the arc's centre, where nothing new can be seen. If no safe cell is
    that close the whole pool is used.
    """
    if robot_radius is None:
        robot_radius = grid.resolution
    reach = max(reach, 2.0 * robot_radius)
    mask = frontier_mask(grid.cells)
    if not mask.any():
        return []
    labels, n = ndimage.label(mask, structure=_EIGHT)
    res = grid.resolution

    occupied = grid.cells == OCCUPIED
    if occupied.any():
        clearance = ndimage.distance_transform_edt(~occupied) * res
    else:
        clearance = np.full(grid.cells.shape, np.inf)
    free = grid.cells == FREE
    safe = free & (clearance >= robot_radius - 1e-9)
    pool = safe if safe.any() else free
    pool_y, pool_x = np.nonzero(pool)
    pool_cx = (pool_x + 0.5) * res
    pool_cy = (pool_y + 0.5) * res

    unknown = grid.cells == UNKNOWN
    slices = ndimage.find_objects(labels)
    out = []
    for label_id, sl in enumerate(slices, start=1):
        ys, xs = np.nonzero(labels[sl] == label_id)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        order = np.lexsort((xs, ys))
        xs, ys = xs[order], ys[order]
        centroid = (float(np.mean((xs + 0.5) * res)), float(np.mean((ys + 0.5) * res)))
        cand = _near_cluster(pool_cx, pool_cy, xs, ys, res, reach)
        cx_, cy_ = (pool_cx[cand], pool_cy[cand]) if len(cand) else (pool_cx, pool_cy)
        d2 = (cx_ - centroid[0]) ** 2 + (cy_ - centroid[1]) ** 2
        best = int(np.argmin(d2))
        vp = (float(cx_[best]), float(cy_[best]))
        direction = None
        if math.hypot(centroid[0] - vp[0], centroid[1] - vp[1]) < res:
            # viewpoint on the centroid: face the unknown side instead
            direction = _outward_normal(unknown, xs, ys)
        if direction is not None:
            heading = math.atan2(direction[1], direction[0])
        else:
            heading = math.atan2(centroid[1] - vp[1], centroid[0] - vp[0])
        stamps = grid.anchor_stamp[ys, xs]
        stamps = stamps[stamps != NO_ANCHOR]
        anchor = int(stamps.max()) if len(stamps) else None
        viewpoint = Pose(vp, heading)
        frontier = Frontier(
            cells=tuple((int(x), int(y)) for x, y in zip(xs, ys)),
            centroid=centroid,
            viewpoint=viewpoint,
            anchor_id=anchor,
        )
        openness = raycast_openness(grid, viewpoint, centroid, h_max, direction)
        out.append(replace(frontier, openness=openness))
    out.sort(key=lambda f: (f.centroid[1], f.centroid[0]))
    return out
