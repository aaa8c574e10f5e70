"""Scene files: ground-truth walls and object placements.

Schema (JSON)::

    {
      "format": "semnav-scene",
      "version": 1,
      "width": 120, "height": 80,          # cells
      "resolution": 0.1,                   # metres per cell
      "walls": [[ix0, iy0, ix1, iy1], ...],  # inclusive cell rectangles
      "objects": [
        {"id": "bed-1", "label": "bed", "position": [x, y],
         "extent": [w, h], "height": 0.5}
      ]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCENE_FORMAT = "semnav-scene"
SCENE_VERSION = 1


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    id: str
    label: str
    position: tuple[float, float]
    extent: tuple[float, float]
    height: float = 0.5

    def box(self) -> tuple[float, float, float, float]:
        x, y = self.position
        w, h = self.extent
        return x - w / 2, y - h / 2, x + w / 2, y + h / 2

    def distance_to(self, point) -> float:
        """Euclidean distance from ``point`` to the object's footprint box."""
        x0, y0, x1, y1 = self.box()
        dx = max(x0 - point[0], 0.0, point[0] - x1)
        dy = max(y0 - point[1], 0.0, point[1] - y1)
        return math.hypot(dx, dy)


@dataclass
class Scene:
    width: int
    height: int
    resolution: float
    walls: list[tuple[int, int, int, int]] = field(default_factory=list)
    objects: list[SceneObject] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.resolution <= 0:
            raise SceneError("resolution must be positive")
        if self.width <= 0 or self.height <= 0:
            raise SceneError("scene dimensions must be positive")
        self._occupied = None

    @property
    def occupied(self) -> np.ndarray:
        """Boolean obstacle mask indexed ``[iy, ix]``; the border is always solid."""
        if self._occupied is None:
            occ = np.zeros((self.height, self.width), dtype=bool)
            occ[0, :] = occ[-1, :] = True
            occ[:, 0] = occ[:, -1] = True
            for x0, y0, x1, y1 in self.walls:
                xa, xb = sorted((x0, x1))
                ya, yb = sorted((y0, y1))
                occ[max(ya, 0):min(yb, self.height - 1) + 1, max(xa, 0):min(xb, self.width - 1) + 1] = True
            occ.flags.writeable = False
            self._occupied = occ
        return self._occupied

    def is_free(self, point) -> bool:
        ix = int(math.floor(point[0] / self.resolution))
        iy = int(math.floor(point[1] / self.resolution))
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            return False
        return not self.occupied[iy, ix]

    def objects_with_label(self, labels) -> list[SceneObject]:
        labels = set(labels)
        return [o for o in self.objects if o.label in labels]

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "version": SCENE_VERSION,
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "walls": [list(w) for w in self.walls],
            "objects": [
                {"id": o.id, "label": o.label, "position": list(o.position),
                 "extent": list(o.extent), "height": o.height}
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        if data.get("format") != SCENE_FORMAT:
            raise SceneError(f"not a scene document (format={data.get('format')!r})")
        if data.get("version") != SCENE_VERSION:
            raise SceneError(f"unsupported scene version {data.get('version')!r}")
        try:
            objects = [
                SceneObject(str(o["id"]), str(o["label"]), tuple(map(float, o["position"])),
                            tuple(map(float, o["extent"])), float(o.get("height", 0.5)))
                for o in data.get("objects", [])
            ]
            walls = [tuple(int(v) for v in w) for w in data.get("walls", [])]
            scene = cls(int(data["width"]), int(data["height"]), float(data["resolution"]),
                        walls, objects, str(data.get("name", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"malformed scene: {exc}") from exc
        if any(len(w) != 4 for w in walls):
            raise SceneError("each wall must be [ix0, iy0, ix1, iy1]")
        return scene

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Scene":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise SceneError(f"cannot read scene {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SceneError(f"scene {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)
