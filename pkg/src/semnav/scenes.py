"""Synthetic scene and episode generators used by the fixtures and tests."""

from __future__ import annotations

import math

import numpy as np

from .harness import Episode
from .oracle import Instruction
from .scene import Scene, SceneObject
from .world import Pose

ROOM_KITS = {
    "bedroom": ("bed", "nightstand", "lamp", "wardrobe", "pillow"),
    "office": ("desk", "chair", "monitor", "bookshelf", "backpack"),
    "living": ("sofa", "tv", "coffee table", "rug", "plant"),
    "bathroom": ("toilet", "sink", "towel", "mirror", "bathtub"),
    "kitchen": ("refrigerator", "oven", "counter", "microwave", "bread"),
}
ROOM_TARGET = {"bedroom": "bed", "office": "chair", "living": "sofa",
               "bathroom": "toilet", "kitchen": "refrigerator"}
RELATED_HINT = {"bed": "nightstand", "chair": "desk", "sofa": "tv", "toilet": "sink",
                "refrigerator": "counter"}
EXTENTS = {"bed": (2.0, 1.6), "sofa": (2.0, 0.9), "desk": (1.4, 0.7), "wardrobe": (1.2, 0.6),
           "bathtub": (1.6, 0.8), "counter": (1.8, 0.6), "coffee table": (1.0, 0.6),
           "rug": (1.6, 1.2), "bookshelf": (1.0, 0.4), "refrigerator": (0.8, 0.7)}


def extent_of(label: str) -> tuple[float, float]:
    return EXTENTS.get(label, (0.5, 0.5))


class Room:
    def __init__(self, x0: int, y0: int, x1: int, y1: int, kind: str = ""):
        self.x0, self.y0, self.x1, self.y1 = x0, y0, x1, y1  # inclusive interior cells
        self.kind = kind

    def contains(self, point, res: float, margin: float = 0.0) -> bool:
        return (self.x0 * res + margin <= point[0] <= (self.x1 + 1) * res - margin
                and self.y0 * res + margin <= point[1] <= (self.y1 + 1) * res - margin)

    def random_cell_centre(self, rng, res: float, margin: float) -> tuple[float, float]:
        m = int(math.ceil(margin / res))
        ix = int(rng.integers(self.x0 + m, self.x1 - m + 1))
        iy = int(rng.integers(self.y0 + m, self.y1 - m + 1))
        return ((ix + 0.5) * res, (iy + 0.5) * res)


def room_grid_scene(rng: np.random.Generator, rows: int = 2, cols: int = 3, room_cells: int = 40,
                    resolution: float = 0.1, wall: int = 2, door_cells: int = 10,
                    extra_door_prob: float = 0.3, objects_per_room: int = 3,
                    kinds=None, name: str = "") -> tuple[Scene, list[Room]]:
    """Rectangular rooms on a grid joined by doors along a random spanning tree."""
    width = cols * (room_cells + wall) + wall
    height = rows * (room_cells + wall) + wall
    walls = []
    xs = [c * (room_cells + wall) for c in range(cols + 1)]
    ys = [r * (room_cells + wall) for r in range(rows + 1)]
    for x in xs:
        walls.append([x, 0, x + wall - 1, height - 1])
    for y in ys:
        walls.append([0, y, width - 1, y + wall - 1])

    rooms = [[Room(xs[c] + wall, ys[r] + wall, xs[c + 1] - 1, ys[r + 1] - 1) for c in range(cols)]
             for r in range(rows)]
    # spanning tree by randomised depth-first search, plus a few extra doors
    seen = {(0, 0)}
    stack = [(0, 0)]
    doors = set()
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0))
                if 0 <= r + dr < rows and 0 <= c + dc < cols and (r + dr, c + dc) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        doors.add(frozenset(((r, c), nxt)))
        seen.add(nxt)
        stack.append(nxt)
    for r in range(rows):
        for c in range(cols):
            for nxt in ((r, c + 1), (r + 1, c)):
                if nxt[0] < rows and nxt[1] < cols and rng.random() < extra_door_prob:
                    doors.add(frozenset(((r, c), nxt)))

    openings = []
    for door in sorted(doors, key=lambda d: sorted(d)):
        (r0, c0), (r1, c1) = sorted(door)
        if r0 == r1:  # vertical wall between columns c0 and c1
            x = xs[c1]
            lo = ys[r0] + wall + 2
            y = int(rng.integers(lo, ys[r0 + 1] - door_cells - 1))
            openings.append((x, y, x + wall - 1, y + door_cells - 1))
        else:
            y = ys[r1]
            lo = xs[c0] + wall + 2
            x = int(rng.integers(lo, xs[c0 + 1] - door_cells - 1))
            openings.append((x, y, x + door_cells - 1, y + wall - 1))
    walls = carve(walls, openings)

    flat = [room for row in rooms for room in row]
    kinds = list(kinds) if kinds else list(ROOM_KITS)
    order = rng.permutation(len(kinds)).tolist()
    objects = []
    for i, room in enumerate(flat):
        room.kind = kinds[order[i % len(kinds)]]
        kit = list(ROOM_KITS[room.kind])
        picks = [ROOM_TARGET[room.kind]] + [kit[j] for j in rng.permutation(len(kit)).tolist()
                                            if kit[j] != ROOM_TARGET[room.kind]][:objects_per_room - 1]
        placed = []
        for label in picks:
            pos = _place(rng, room, resolution, extent_of(label), placed)
            if pos is None:
                continue
            placed.append((pos, extent_of(label)))
            objects.append(SceneObject(f"{label.replace(' ', '-')}-{len(objects)}", label, pos, extent_of(label)))
    return Scene(width, height, resolution, [tuple(w) for w in walls], objects, name), flat


def carve(walls, openings):
    """Split wall rectangles so that every opening rectangle becomes free."""
    out = [list(w) for w in walls]
    for ox0, oy0, ox1, oy1 in openings:
        nxt = []
        for x0, y0, x1, y1 in out:
            if ox1 < x0 or ox0 > x1 or oy1 < y0 or oy0 > y1:
                nxt.append([x0, y0, x1, y1])
                continue
            if y0 < oy0:
                nxt.append([x0, y0, x1, oy0 - 1])
            if y1 > oy1:
                nxt.append([x0, oy1 + 1, x1, y1])
            ya, yb = max(y0, oy0), min(y1, oy1)
            if x0 < ox0:
                nxt.append([x0, ya, ox0 - 1, yb])
            if x1 > ox1:
                nxt.append([ox1 + 1, ya, x1, yb])
        out = nxt
    return out


def _place(rng, room: Room, res: float, extent, placed, tries: int = 50):
    w, h = extent
    lo_x, hi_x = room.x0 * res + w / 2 + 0.3, (room.x1 + 1) * res - w / 2 - 0.3
    lo_y, hi_y = room.y0 * res + h / 2 + 0.3, (room.y1 + 1) * res - h / 2 - 0.3
    if lo_x > hi_x or lo_y > hi_y:
        return None
    for _ in range(tries):
        p = (round(float(rng.uniform(lo_x, hi_x)), 2), round(float(rng.uniform(lo_y, hi_y)), 2))
        if all(abs(p[0] - q[0]) > (w + e[0]) / 2 + 0.2 or abs(p[1] - q[1]) > (h + e[1]) / 2 + 0.2
               for q, e in placed):
            return p
    return None


def multi_room_episodes(seed: int, n_scenes: int = 5, per_scene: int = 4, max_steps: int = 200,
                        success_radius: float = 1.0, scene_prefix: str = "rooms"):
    """Seeded multi-room episodes; each starts in a room that does not hold its target."""
    rng = np.random.default_rng(seed)
    episodes = []
    scenes = []
    for s in range(n_scenes):
        rows, cols = (2, 3) if s % 2 == 0 else (3, 2)
        scene, rooms = room_grid_scene(rng, rows, cols, name=f"{scene_prefix}-{s}")
        scenes.append(scene)
        for k in range(per_scene):
            target_room = rooms[int(rng.integers(len(rooms)))]
            target = ROOM_TARGET[target_room.kind]
            others = [r for r in rooms if r.kind != target_room.kind]
            start_room = others[int(rng.integers(len(others)))]
            start = start_room.random_cell_centre(rng, scene.resolution, 0.6)
            while not scene.is_free(start):
                start = start_room.random_cell_centre(rng, scene.resolution, 0.6)
            if rng.random() < 0.5:
                text = f"find the {target}"
            else:
                text = f"go to the {target} near the {RELATED_HINT[target]}"
            episodes.append(Episode(
                id=f"{scene.name}-e{k}", scene=scene,
                start=Pose(start, float(rng.uniform(-math.pi, math.pi))),
                instruction=Instruction(text), target_labels=(target,),
                success_radius=success_radius, max_steps=max_steps,
                scene_ref=f"{scene.name}.json", tags=("multi-room",)))
    return scenes, episodes


DIVERGENCE_PAIRS = (("backpack", "chair"), ("bread", "counter"), ("carrot", "refrigerator"),
                    ("paper cup", "table"), ("fire extinguisher", "door"))


def _hidden_from(scene: Scene, region, point, max_range: float) -> bool:
    """No free cell of ``region`` (cell rectangle) within range has line of sight to ``point``."""
    from .world import line_of_sight
    x0, y0, x1, y1 = region
    res = scene.resolution
    for iy in range(y0, y1 + 1):
        for ix in range(x0, x1 + 1):
            if scene.occupied[iy, ix]:
                continue
            c = ((ix + 0.5) * res, (iy + 0.5) * res)
            if math.hypot(c[0] - point[0], c[1] - point[1]) <= max_range \
                    and line_of_sight(scene.occupied, c, point, res):
                return False
    return True


def divergence_scene(rng: np.random.Generator, name: str = "divergence"):
    """Corridor with a closet just ahead of the start and a decoy cue far ahead.

    The closet door sits at its right end and the target in its far bottom
    corner, so the target is hidden from the corridor but seen from the
    doorway. A related object further down the corridor is in view of the
    first anchor, drawing score-greedy exploration past the closet.
    Returns ``(scene, start, target_label, decoy_label)``.
    """
    res = 0.1
    target, decoy = DIVERGENCE_PAIRS[int(rng.integers(len(DIVERGENCE_PAIRS)))]
    cw = int(rng.integers(14, 19))          # corridor width
    length = int(rng.integers(170, 211))     # corridor length
    start_x = int(rng.integers(35, 56))
    door_x = start_x + int(rng.integers(6, 13))
    door_w = 8
    closet_w = int(rng.integers(18, 25))
    closet_h = int(rng.integers(12, 17))
    room_w = int(rng.integers(40, 51))
    y_c0 = 10
    top = y_c0 + cw                          # first wall row above the corridor
    height = top + 2 + max(closet_h, 20) + 2
    width = length + 2
    cx0 = door_x + door_w - closet_w
    walls = [(1, 1, width - 2, y_c0 - 1), (1, top, width - 2, height - 2)]
    openings = [(1, y_c0, width - 2, top - 1),                                   # corridor
                (door_x, top, door_x + door_w - 1, top + 1),                    # door
                (cx0, top + 2, door_x + door_w - 1, top + 1 + closet_h),        # closet
                (width - 2 - room_w, top, width - 2, height - 2)]               # far room
    walls = carve([list(w) for w in walls], openings)
    tx, ty = (cx0 + 3) * res, (top + 2 + 3) * res
    cy = (y_c0 + cw / 2) * res
    objects = [SceneObject(f"{target.replace(' ', '-')}-0", target, (round(tx, 2), round(ty, 2)), (0.4, 0.4))]
    decoy_x = (start_x + int(rng.integers(42, 54))) * res
    objects.append(SceneObject(f"{decoy}-1", decoy, (round(decoy_x, 2), round(cy + 0.3, 2)), extent_of(decoy)))
    room_x0 = (width - 2 - room_w) * res
    for k, label in enumerate(("desk", "lamp", decoy)):
        pos = (round(room_x0 + 0.8 + 1.2 * k, 2), round((top + 6 + 8 * (k % 2)) * res, 2))
        objects.append(SceneObject(f"{label.replace(' ', '-')}-{k + 2}", label, pos, (0.5, 0.5)))
    scene = Scene(width, height, res, [tuple(w) for w in walls], objects, name)
    start = ((start_x + 0.5) * res, (y_c0 + cw // 2 + 0.5) * res)
    return scene, start, target, decoy


def divergence_episodes(seed: int, n: int = 24, max_steps: int = 200, success_radius: float = 1.0):
    """Greedy-vs-WTRP divergence fixtures; the target is hidden from the whole corridor."""
    from .world import SensorSpec
    rng = np.random.default_rng(seed)
    scenes, episodes = [], []
    while len(episodes) < n:
        scene, start, target, decoy = divergence_scene(rng, name=f"divergence-{len(episodes)}")
        tgt = scene.objects[0]
        corridor = (1, 1, scene.width - 2, int(tgt.position[1] / scene.resolution) - 6)
        if not _hidden_from(scene, corridor, tgt.position, SensorSpec().image_range):
            continue
        scenes.append(scene)
        text = f"find the {target}" if rng.random() < 0.5 else f"find the {target} near the {decoy}"
        episodes.append(Episode(
            id=scene.name, scene=scene, start=Pose(start, 0.0), instruction=Instruction(text),
            target_labels=(target,), success_radius=success_radius, max_steps=max_steps,
            scene_ref=f"{scene.name}.json", tags=("divergence",)))
    return scenes, episodes


# --------------------------------------------------------------------------
# frontier-utility ablation fixtures

# target, related object planted near the right frontier, stronger image-only decoy
STRUCT_CUES = (("nightstand", "lamp", "bed"), ("toilet", "bathtub", "sink"),
               ("refrigerator", "oven", "counter"), ("sink", "mirror", "toilet"))
# target, weak unrelated object planted near a wrong frontier
VISUAL_CUES = (("bed", "lamp"), ("bed", "wardrobe"), ("sofa", "rug"), ("toilet", "towel"),
               ("chair", "backpack"))
ARMS = {"east": (1.0, 0.0), "west": (-1.0, 0.0), "north": (0.0, 1.0)}


def junction_scene(rng: np.random.Generator, kind: str, name: str = "junction"):
    """T junction with east, west and north arms; the agent starts in the hub.

    ``kind="struct"``: a related object sits just inside the depth range of
    the correct arm, the target lies beyond image range, and a higher
    affinity decoy is visible (image only) down a wrong arm.
    ``kind="visual"``: the target is inside image range but beyond depth
    range down the correct arm, and a weak unrelated object sits near a
    wrong arm's frontier.
    Returns ``(scene, start, target_label, correct_arm)``.
    """
    if kind not in ("struct", "visual"):
        raise ValueError(f"unknown fixture kind {kind!r}")
    res = 0.1
    cw = int(rng.integers(10, 15))
    arm = 90
    width = 2 * arm + cw + 2
    y_c0 = 1
    height = y_c0 + cw + arm + 1
    hub_x0 = 1 + arm
    walls = [(1, y_c0 + cw, hub_x0 - 1, height - 2), (hub_x0 + cw, y_c0 + cw, width - 2, height - 2)]
    start = ((hub_x0 + cw / 2) * res, (y_c0 + cw / 2) * res)
    names = list(ARMS)
    correct = names[int(rng.integers(3))]
    wrong = [a for a in names if a != correct]
    other = wrong[int(rng.integers(2))]

    def along(a, d, lateral=0.0):
        ux, uy = ARMS[a]
        return (round(start[0] + ux * d - uy * lateral, 2), round(start[1] + uy * d + ux * lateral, 2))

    half = cw * res / 2 - 0.35
    objects = []
    if kind == "struct":
        target, related, decoy = STRUCT_CUES[int(rng.integers(len(STRUCT_CUES)))]
        objects.append(SceneObject("target-0", target, along(correct, rng.uniform(7.0, 8.5)), (0.4, 0.4)))
        objects.append(SceneObject("cue-1", related, along(correct, rng.uniform(2.2, 2.4),
                                                          rng.uniform(-half, half)), (0.5, 0.5)))
        objects.append(SceneObject("decoy-2", decoy, along(other, rng.uniform(4.0, 5.5)), (0.5, 0.5)))
    else:
        target, weak = VISUAL_CUES[int(rng.integers(len(VISUAL_CUES)))]
        objects.append(SceneObject("target-0", target, along(correct, rng.uniform(4.0, 5.5)), (0.4, 0.4)))
        objects.append(SceneObject("cue-1", weak, along(other, rng.uniform(2.2, 2.4),
                                                       rng.uniform(-half, half)), (0.5, 0.5)))
    scene = Scene(width, height, res, walls, objects, name)
    return scene, start, target, correct


def utility_ablation_episodes(seed: int, n: int = 24, kind: str = "struct", max_steps: int = 200):
    """Junction fixtures; the correct arm is recorded as an ``arm:<name>`` tag."""
    rng = np.random.default_rng(seed)
    scenes, episodes = [], []
    for i in range(n):
        scene, start, target, correct = junction_scene(rng, kind, name=f"junction-{kind}-{i}")
        scenes.append(scene)
        episodes.append(Episode(
            id=scene.name, scene=scene, start=Pose(start, float(rng.uniform(-math.pi, math.pi))),
            instruction=Instruction(f"find the {target}"), target_labels=(target,),
            max_steps=max_steps, scene_ref=f"{scene.name}.json", tags=(f"utility-{kind}", f"arm:{correct}")))
    return scenes, episodes


def benchmark_episode(seed: int = 0, target: str = "bed", max_steps: int = 1000):
    """A 256 x 256 cell (51.2 m) house of 36 rooms with ``target`` removed.

    The target never appears, so an episode keeps exploring until its step
    budget or the frontiers run out; used for timing runs.
    """
    rng = np.random.default_rng(seed)
    scene, rooms = room_grid_scene(rng, 6, 6, room_cells=38, resolution=0.2, wall=4, door_cells=8,
                                   name=f"benchmark-{seed}")
    scene = Scene(scene.width, scene.height, scene.resolution, scene.walls,
                  [o for o in scene.objects if o.label != target], scene.name)
    start = rooms[0].random_cell_centre(rng, scene.resolution, 0.6)
    return Episode(id=scene.name, scene=scene, start=Pose(start, 0.0),
                   instruction=Instruction(f"find the {target}"), target_labels=(target,),
                   max_steps=max_steps, scene_ref=f"{scene.name}.json", tags=("benchmark",))
