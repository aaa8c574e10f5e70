import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semnav.memory import CognitiveMemoryGraph, ObjectNode, VisualAnchor, audit
from semnav.multicover import (InstanceTooLarge, MulticoverInstance, build_instance, compact, solve_exact,
                               solve_greedy)
from semnav.oracle import label_embedding
from semnav.world import Pose


def brute_force(inst):
    """Cheapest feasible subset; ties to the lexicographically smallest sorted tuple."""
    best = (math.inf, None)
    m = inst.n_anchors
    for k in range(m + 1):
        for combo in itertools.combinations(range(m), k):
            if inst.is_feasible(combo):
                c = inst.cost(combo)
                if c < best[0] - 1e-9 or (abs(c - best[0]) <= 1e-9 and combo < best[1]):
                    best = (c, combo)
    return best


def random_instance(rng, m, n_obj, r, unit=False):
    sets = []
    for _ in range(m):
        k = int(rng.integers(0, min(n_obj, 4) + 1))
        sets.append(set(rng.choice(n_obj, size=k, replace=False).tolist()))
    if not any(sets):
        sets[0] = {0}
    costs = None if unit else rng.uniform(0.5, 3.0, m).round(2)
    return MulticoverInstance.from_sets(sets, r, costs)


def test_spec_example_r1_and_r2():
    sets = [{1, 2}, {1}, {2}]
    r1 = solve_exact(MulticoverInstance.from_sets(sets, 1))
    assert r1.selected == {0} and r1.total_cost == 1 and r1.optimal
    r2 = solve_exact(MulticoverInstance.from_sets(sets, 2))
    assert r2.selected == {0, 1, 2} and r2.total_cost == 3


def test_single_anchor_and_empty():
    inst = MulticoverInstance.from_sets([{7}], 1)
    assert solve_exact(inst).selected == {0}
    empty = MulticoverInstance.from_sets([set(), set()], 2)
    assert solve_greedy(empty).selected == frozenset()
    assert solve_greedy(empty).total_cost == 0


def test_greedy_takes_dominating_anchor():
    inst = MulticoverInstance.from_sets([{1}, {1, 2, 3}, {3}], 1)
    assert solve_greedy(inst).selected == {1}


def test_size_limit():
    inst = MulticoverInstance.from_sets([{0}] * 25, 1)
    with pytest.raises(InstanceTooLarge):
        solve_exact(inst)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 30), st.integers(1, 10), st.integers(1, 6), st.integers(1, 3))
def test_exact_matches_enumeration(seed, m, n_obj, r):
    inst = random_instance(np.random.default_rng(seed), m, n_obj, r)
    res = solve_exact(inst)
    cost, combo = brute_force(inst)
    assert res.total_cost == pytest.approx(cost, abs=1e-9)
    assert tuple(sorted(res.selected)) == combo
    assert inst.is_feasible(res.selected)


@settings(max_examples=400, deadline=None)
@given(st.integers(0, 2 ** 30), st.integers(1, 16), st.integers(1, 8), st.integers(1, 3))
def test_greedy_feasible_and_bounded(seed, m, n_obj, r):
    inst = random_instance(np.random.default_rng(seed), m, n_obj, r)
    g = solve_greedy(inst)
    e = solve_exact(inst)
    assert inst.is_feasible(g.selected) and not g.optimal
    assert g.total_cost >= e.total_cost - 1e-9
    biggest = max(sum(1 for cov in inst.coverage if i in cov) for i in range(m))
    if e.total_cost > 0:
        assert g.total_cost / e.total_cost <= 1 + math.log(max(biggest, 1)) + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 30), st.integers(1, 10), st.integers(1, 6))
def test_cost_monotone_in_r(seed, m, n_obj):
    rng = np.random.default_rng(seed)
    base = random_instance(rng, m, n_obj, 1)
    sets = [set() for _ in range(m)]
    for j, cov in enumerate(base.coverage):
        for i in cov:
            sets[i].add(base.object_ids[j])
    costs = list(base.anchor_costs)
    prev = 0.0
    for r in (1, 2, 3):
        c = solve_exact(MulticoverInstance.from_sets(sets, r, costs)).total_cost
        assert c >= prev - 1e-9
        prev = c


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 30), st.integers(1, 10), st.integers(1, 6))
def test_unit_cost_r1_is_set_cover(seed, m, n_obj):
    inst = random_instance(np.random.default_rng(seed), m, n_obj, 1, unit=True)
    universe = set(range(len(inst.coverage)))
    per_anchor = [{j for j, cov in enumerate(inst.coverage) if i in cov} for i in range(m)]
    best = min(k for k in range(m + 1) for combo in itertools.combinations(range(m), k)
               if set().union(*[per_anchor[i] for i in combo]) >= universe)
    assert solve_exact(inst).total_cost == best


# -- graph level -----------------------------------------------------------

def graph_from_views(views):
    g = CognitiveMemoryGraph()
    for aid, labels in enumerate(views):
        nodes = []
        for lab in labels:
            x = 3.0 * (ord(lab[0]) - 96)
            pts = np.array([[x, 0, 0], [x + 0.5, 0.5, 0.5]])
            nodes.append(ObjectNode(-1, lab, pts, label_embedding(lab)))
        g.insert_anchor(VisualAnchor(aid, Pose((float(aid), 0.0))), nodes)
    return g


def test_build_instance_matches_edges():
    g = graph_from_views([["a", "b"], ["b"], ["c"], ["a", "c"]])
    inst = build_instance(g, 3)
    assert len(g.objects) == 3
    edges = {(inst.anchor_ids[i], inst.object_ids[j]) for j, cov in enumerate(inst.coverage) for i in cov}
    assert edges == g.edges
    assert inst.required == (2, 2, 2)
    one = build_instance(graph_from_views([["a"], ["b"], ["b"], ["b"], ["b"], ["b"]]), 2)
    assert sorted(one.required) == [1, 2]
    assert build_instance(graph_from_views([["a"]]), 3).required == (1,)


def test_compact_ten_anchor_fixture():
    views = [["a", "b"], ["a"], ["b"], ["a", "b", "c"], ["c"], ["c", "d"], ["d"], ["d", "e"], ["e"], ["a", "e"]]
    g = graph_from_views(views)
    opt = solve_exact(build_instance(g, 1)).total_cost
    n_obj = len(g.objects)
    compact(g, r=1)
    assert len(g.anchors) == opt
    assert len(g.objects) == n_obj
    assert audit(g, allow_isolated=False) == []
    inst = build_instance(g, 1)
    assert all(len(c) >= 1 for c in inst.coverage)


def test_compact_fixpoint():
    g = graph_from_views([["a"], ["b"]])
    v = g.version
    compact(g, r=1)
    assert len(g.anchors) == 2 and g.version == v
