import csv
import json
from pathlib import Path

import numpy as np
import pytest

from semnav.cli import main
from semnav.memory import CognitiveMemoryGraph, ObjectNode, VisualAnchor
from semnav.oracle import label_embedding
from semnav.plotting import read_pgm
from semnav.world import Pose

FIX = Path(__file__).resolve().parent.parent / "fixtures"
ROOMS = str(FIX / "rooms.json")
FIRST = json.loads((FIX / "rooms.json").read_text())["episodes"][0]["id"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_outputs(tmp_path, capsys):
    code, out, _ = run(["run", "--suite", ROOMS, "--episode", FIRST, "--policy", "full,greedy-goal",
                        "--out", str(tmp_path), "--quiet"], capsys)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert [r["policy"] for r in rows] == ["full", "greedy-goal"]
    assert (tmp_path / "episodes.csv").exists()
    for policy in ("full", "greedy-goal"):
        assert (tmp_path / "traces" / f"{policy}__{FIRST}.jsonl").stat().st_size > 0
        assert (tmp_path / "plots" / f"{policy}__{FIRST}.png").read_bytes()[:4] == b"\x89PNG"
    assert (tmp_path / "plots" / "policies.png").exists()
    assert "greedy-goal" in out


def test_run_is_reproducible(tmp_path, capsys):
    hashes = []
    for name in ("a", "b"):
        code, _, _ = run(["run", "--suite", ROOMS, "--episode", FIRST, "--out", str(tmp_path / name),
                          "--no-plots", "--quiet", "--seed", "3"], capsys)
        assert code == 0
        code, out, _ = run(["trace", "--file", str(tmp_path / name / "traces" / f"full__{FIRST}.jsonl")], capsys)
        assert code == 0
        hashes.append(out.splitlines()[-1])
    assert hashes[0] == hashes[1]
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["run", "--suite", ROOMS, "--set", "utility.nope=1"],
    ["run", "--suite", ROOMS, "--policy", "random"],
    ["run", "--suite", ROOMS, "--episode", "missing"],
    ["run", "--suite", "does-not-exist.json"],
    ["solve-wtrp", "--file", str(FIX / "wtrp_bad.json")],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    code, _, err = run(argv + (["--out", str(tmp_path)] if argv[0] == "run" else []), capsys)
    assert code == 2
    if argv[0] != "frobnicate":
        assert "error" in err


def test_solve_flip(capsys):
    code, out, _ = run(["solve-wtrp", "--file", str(FIX / "wtrp_flip.json")], capsys)
    assert code == 0
    assert "order: 2 1" in out and "objective: 27" in out
    code, out, _ = run(["solve-wtrp", "--file", str(FIX / "wtrp_uniform.json"), "--json"], capsys)
    doc = json.loads(out)
    assert doc["order"] == [1, 2] and doc["objective"] == 7.0


def test_solve_exact_too_large(tmp_path, capsys):
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, (21, 2))
    m = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    m[1:, 0] = 0
    path = tmp_path / "big.json"
    path.write_text(json.dumps({"format": "semnav-wtrp", "version": 1, "weights": [1.0] * 20,
                                "matrix": m.tolist()}))
    code, _, err = run(["solve-wtrp", "--file", str(path), "--exact"], capsys)
    assert code == 2 and "exact_limit" in err
    code, out, _ = run(["solve-wtrp", "--file", str(path)], capsys)
    assert code == 0 and "optimal: unknown" in out


def small_graph(path):
    g = CognitiveMemoryGraph()
    for i, (label, x) in enumerate((("pillow", 2.0), ("sink", 6.0), ("pillow", 2.05))):
        pts = np.array([[x - 0.2, 3.0, 0.0], [x + 0.2, 3.4, 0.5]])
        g.insert_anchor(VisualAnchor(i, Pose((x, 1.0))), [ObjectNode(-1, label, pts, label_embedding(label))])
    g.save(path)
    return g


def test_heatmap_brightest_at_source_and_boost(tmp_path, capsys):
    gpath = tmp_path / "g.json"
    small_graph(gpath)
    base = ["heatmap", "--graph", str(gpath), "--instruction", "find the bed",
            "--width", "80", "--height", "50", "--resolution", "0.1"]
    code, out, _ = run(base + ["--out", str(tmp_path / "b.pgm")], capsys)
    assert code == 0
    boosted = read_pgm(tmp_path / "b.pgm")
    run(base + ["--no-boost", "--out", str(tmp_path / "u.pgm")], capsys)
    plain = read_pgm(tmp_path / "u.pgm")
    assert boosted.shape == (50, 80)
    # image rows run top-down; the pillow sits at (2.0, 3.2) -> cell (20, 32)
    r, c = np.unravel_index(boosted.argmax(), boosted.shape)
    assert (c, 49 - r) == (20, 32)
    assert (boosted.astype(int) >= plain.astype(int)).all()
    first = (tmp_path / "b.pgm").read_bytes()
    run(base + ["--out", str(tmp_path / "b2.pgm")], capsys)
    assert (tmp_path / "b2.pgm").read_bytes() == first


def test_compact_and_dump(tmp_path, capsys):
    gpath = tmp_path / "g.json"
    small_graph(gpath)
    code, out, _ = run(["compact", "--graph", str(gpath), "--r", "1", "--out", str(tmp_path / "c.json")], capsys)
    assert code == 0 and "3 -> 2" in out
    assert len(CognitiveMemoryGraph.load(tmp_path / "c.json").anchors) == 2
    code, _, _ = run(["dump-graph", "--suite", ROOMS, "--episode", FIRST, "--out", str(tmp_path / "d.json")],
                     capsys)
    assert code == 0
    d = CognitiveMemoryGraph.load(tmp_path / "d.json")
    assert len(d.anchors) > 0
    code, _, err = run(["compact", "--graph", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.json")],
                       capsys)
    assert code == 2
