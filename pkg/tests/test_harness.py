import json
import math

import numpy as np
import pytest

from semnav.harness import (Bundle, ConfigError, Episode, HarnessConfig, load_suite, run_episode, run_suite,
                            shortest_length, suite_to_dict, trace_hash, write_trace)
from semnav.oracle import Instruction, MockOracle
from semnav.scene import Scene, SceneObject
from semnav.scenes import divergence_episodes, multi_room_episodes
from semnav.world import Pose

ORACLE = MockOracle()


def open_room(objects=()):
    return Scene(60, 40, 0.1, [], list(objects), "room")


def episode(scene, text="find the bed", targets=("bed",), start=(1.0, 2.0), max_steps=150, eid="e"):
    return Episode(eid, scene, Pose(start), Instruction(text), targets, 1.0, max_steps, "room.json")


BED = SceneObject("bed-1", "bed", (4.5, 2.0), (1.2, 0.8))


def test_visible_target_succeeds():
    r = run_episode(episode(open_room([BED])), Bundle(), ORACLE)
    assert r.outcome == "Success" and r.success
    assert r.steps_to_discovery <= r.steps
    assert BED.distance_to(r.trajectory[-1]) <= 1.0
    # actual path can never beat the grid optimum by more than one cell diagonal
    assert r.actual_length >= r.shortest_length - 0.1 * math.sqrt(2)
    assert any(row.get("event") == "target_found" for row in r.trace)


def test_absent_target_exhausts_frontiers():
    r = run_episode(episode(open_room([SceneObject("s", "sink", (4.5, 2.0), (0.5, 0.5))]), max_steps=400),
                    Bundle(), ORACLE)
    assert r.outcome == "NoFrontier" and not r.success
    assert math.isinf(r.shortest_length)


def test_unknown_target_word():
    r = run_episode(episode(open_room([BED]), text="find the wombat"), Bundle(), ORACLE)
    assert r.outcome == "NoTarget"


def test_step_budget():
    far = SceneObject("bed-1", "bed", (5.5, 3.5), (0.4, 0.4))
    scene = Scene(60, 40, 0.1, [(30, 0, 30, 38)], [far], "room")
    r = run_episode(episode(scene, max_steps=1), Bundle(), ORACLE)
    assert r.outcome == "Stepout" and r.steps == 1


def test_deterministic_trace():
    ep = multi_room_episodes(3, n_scenes=1, per_scene=1)[1][0]
    a = run_episode(ep, Bundle(), ORACLE, seed=5)
    b = run_episode(ep, Bundle(), ORACLE, seed=5)
    assert trace_hash(a.trace) == trace_hash(b.trace)
    assert (a.outcome, a.steps, a.actual_length) == (b.outcome, b.steps, b.actual_length)


def test_no_vis_never_scores_anchor_images():
    ep = multi_room_episodes(4, n_scenes=1, per_scene=1)[1][0]
    r = run_episode(ep, Bundle(), ORACLE, policy="no-vis")
    assert r.oracle_counts.get("similarity:anchor", 0) == 0
    full = run_episode(ep, Bundle(), ORACLE, policy="full")
    assert full.oracle_counts.get("similarity:anchor", 0) > 0


def test_threaded_reasoning_runs():
    bundle = Bundle(harness=HarnessConfig(reasoning="thread"))
    r = run_episode(episode(open_room([BED])), bundle, ORACLE)
    assert r.outcome == "Success"


def test_trajectory_stays_in_free_space():
    for ep in multi_room_episodes(9, n_scenes=1, per_scene=2)[1]:
        r = run_episode(ep, Bundle(), ORACLE)
        for p in r.trajectory:
            assert ep.scene.is_free(p)
        for q0, q1 in zip(r.trajectory, r.trajectory[1:]):
            assert math.dist(q0, q1) <= Bundle().motion.v_max * Bundle().harness.dt + 1e-9


def test_shortest_length_straight_corridor():
    scene = Scene(50, 10, 0.1, [], [SceneObject("t", "bed", (4.0, 0.5), (0.2, 0.2))], "c")
    # start cell centre 0.55, goal region starts where the box is within 1 m: x >= 2.9 -> cell 29 centre 2.95
    assert shortest_length(scene, (0.55, 0.55), ("bed",), 1.0) == pytest.approx(2.4)
    assert math.isinf(shortest_length(scene, (0.55, 0.55), ("sofa",), 1.0))


def test_suite_round_trip_and_errors(tmp_path):
    scene = open_room([BED])
    scene.save(tmp_path / "room.json")
    eps = [episode(scene, eid="a"), episode(scene, eid="b", start=(2.0, 2.0))]
    doc = suite_to_dict(eps)
    (tmp_path / "suite.json").write_text(json.dumps(doc))
    back = load_suite(tmp_path / "suite.json")
    assert [e.id for e in back] == ["a", "b"] and back[1].start.position == (2.0, 2.0)
    metrics, results = run_suite(back, Bundle(), ORACLE)
    assert metrics.n == 2 and metrics.sr == 1.0
    bad = dict(doc, episodes=[{"scene": "room.json"}])
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="episode 0"):
        load_suite(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_suite(tmp_path / "missing.json")
    (tmp_path / "empty.json").write_text(json.dumps(dict(doc, episodes=[])))
    with pytest.raises(ConfigError):
        load_suite(tmp_path / "empty.json")
    with pytest.raises(ConfigError):
        run_suite(back, Bundle(), ORACLE, policy="nope")


def test_write_trace_jsonl(tmp_path):
    r = run_episode(episode(open_room([BED])), Bundle(), ORACLE)
    out = tmp_path / "deep" / "t.jsonl"
    write_trace(out, r.trace)
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == len(r.trace) and rows[0]["tick"] == 0


def test_divergence_fixture_builds():
    _, eps = divergence_episodes(0, n=2)
    assert len(eps) == 2 and all("divergence" in e.tags for e in eps)
    for e in eps:
        assert np.isfinite(shortest_length(e.scene, e.start.position, e.target_labels, e.success_radius))
