"""Regenerate the files under fixtures/ from fixed seeds."""

import argparse
import dataclasses
import json
from pathlib import Path

from semnav.harness import suite_to_dict
from semnav.scenes import divergence_episodes, multi_room_episodes
from semnav.wtrp import WtrpInstance


def write_suite(root: Path, name: str, scenes, episodes):
    for s in scenes:
        s.save(root / "scenes" / f"{s.name}.json")
    episodes = [dataclasses.replace(e, scene_ref=f"scenes/{e.scene.name}.json") for e in episodes]
    (root / f"{name}.json").write_text(json.dumps(suite_to_dict(episodes), indent=1) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    args = ap.parse_args()
    root = Path(args.out)
    (root / "scenes").mkdir(parents=True, exist_ok=True)

    scenes, episodes = multi_room_episodes(7, n_scenes=2, per_scene=3)
    write_suite(root, "rooms", scenes, episodes)
    scenes, episodes = divergence_episodes(0, n=4)
    write_suite(root, "divergence", scenes, episodes)

    flip = WtrpInstance([1.0, 10.0], [[0, 1, 2], [0, 0, 5], [0, 5, 0]], {"name": "weight flip"})
    flip.save(root / "wtrp_flip.json")
    uniform = WtrpInstance([1.0, 1.0], [[0, 1, 2], [0, 0, 5], [0, 5, 0]], {"name": "uniform"})
    uniform.save(root / "wtrp_uniform.json")
    (root / "wtrp_bad.json").write_text(json.dumps(
        {"format": "semnav-wtrp", "version": 1, "weights": [1.0, 1.0],
         "matrix": [[0, 1, 2], [0, 0, 5], [0, 4, 0]]}) + "\n")


if __name__ == "__main__":
    main()
