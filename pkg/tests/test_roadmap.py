import math
import time

import numpy as np
import pytest

from kinoplan import _kernels as K
from kinoplan.controller import PoseController, rollout_to_goal
from kinoplan.core import Configuration
from kinoplan.dynamics import diff_drive
from kinoplan.environment import Environment, is_config_free, lift_config
from kinoplan.roadmap import (RoadmapError, RoadmapFormatError, RoadmapParams, RoadmapWithGaps, build_roadmap,
                              compute_wavefront, connect_vertex, insert_query, load_roadmap, read_roadmap_header,
                              sample_milestones, save_roadmap, view_of)

from oracles import all_simple_path_costs

CTRL = PoseController()
DD = diff_drive()


# --------------------------------------------------------------------- milestones

def test_milestone_count_empty_room():
    # a point footprint keeps the boundary rows inside the workspace
    env = Environment((0, 10, 0, 10), (), (0.0, 0.0))
    assert len(sample_milestones(env, 1.0, 2 * math.pi / 4)) == 11 * 11 * 4


def test_milestones_exclude_obstacle_cells():
    env = Environment((0, 10, 0, 10), ([[3.5, 3.5], [6.5, 3.5], [6.5, 6.5], [3.5, 6.5]],), (0.0, 0.0))
    v = sample_milestones(env, 1.0, math.pi / 2)
    assert len(v) == 484 - 9 * 4
    assert not np.any((v[:, 0] == 5) & (v[:, 1] == 5))
    assert all(is_config_free(q, env) for q in v)


def test_milestones_deterministic_and_normalized(narrow_env):
    a = sample_milestones(narrow_env)
    b = sample_milestones(narrow_env)
    assert np.array_equal(a, b)
    assert np.all(a[:, 2] > -math.pi) and np.all(a[:, 2] <= math.pi)


def test_narrow_milestone_count_pinned(narrow_env):
    # regression pin for the shipped Narrow map at the default grid
    assert len(sample_milestones(narrow_env)) == 892


def test_extra_milestones_deduplicated(small_env):
    base = sample_milestones(small_env)
    more = sample_milestones(small_env, extra=[tuple(base[0]), (0.8, 0.9, 0.3)])
    assert len(more) == len(base) + 1
    with pytest.raises(RoadmapError):
        sample_milestones(small_env, extra=[(3.5, 3.0, 0.0)])


def test_no_milestones_is_an_error():
    env = Environment((0, 1, 0, 1), ([[-1, -1], [2, -1], [2, 2], [-1, 2]],))
    with pytest.raises(RoadmapError):
        sample_milestones(env)


def test_bad_grid_rejected(small_env):
    with pytest.raises(ValueError):
        sample_milestones(small_env, 0.0)


# --------------------------------------------------------------------- connect

def test_connect_isolated_vertex():
    env = Environment((0, 30, 0, 30))
    c = connect_vertex((5, 5, 0), np.array([[5, 5, 0], [20, 20, 0]]), env, CTRL, DD, index=0)
    assert c.accessible == [] and c.departing == []


def test_connect_two_aligned_vertices():
    env = Environment((0, 10, 0, 10))
    verts = np.array([[4.0, 5.0, 0.0], [5.0, 5.0, 0.0]])
    c = connect_vertex(verts[0], verts, env, CTRL, DD, index=0)
    assert c.accessible == [1] and c.departing == [1]
    for (j, cost) in c.out_edges:
        r = rollout_to_goal(lift_config(verts[0]), verts[j], 10.0, env, CTRL, DD)
        assert r.reached and not r.collided
        assert abs(r.duration - cost) < 1e-9
    for (j, cost) in c.in_edges:
        r = rollout_to_goal(lift_config(verts[j]), verts[0], 10.0, env, CTRL, DD)
        assert r.reached and abs(r.duration - cost) < 1e-9


def test_connect_blocked_by_wall():
    env = Environment((0, 10, 0, 10), ([[4.8, 0], [5.2, 0], [5.2, 10], [4.8, 10]],))
    verts = np.array([[3.5, 5.0, 0.0], [6.5, 5.0, 0.0]])
    c = connect_vertex(verts[0], verts, env, CTRL, DD, index=0)
    assert c.accessible == [] and c.departing == []


# --------------------------------------------------------------------- build

def test_build_invariants(small_env, small_roadmap):
    rm = small_roadmap
    assert rm.n_vertices == 96
    assert rm.n_edges > rm.n_vertices
    assert np.all(rm.src != rm.dst)
    pairs = set(zip(rm.src.tolist(), rm.dst.tolist()))
    assert len(pairs) == rm.n_edges
    assert np.all(rm.cost > 0) and np.all(rm.cost <= 10.0 + 1e-9)
    assert all(is_config_free(q, small_env) for q in rm.vertices)
    assert rm.meta["env_hash"] == small_env.content_hash()


def test_build_edges_replay(small_env, small_roadmap):
    rng = np.random.default_rng(0)
    rm = small_roadmap
    for k in rng.choice(rm.n_edges, 60, replace=False):
        i, j = rm.src[k], rm.dst[k]
        r = rollout_to_goal(lift_config(rm.vertices[i]), rm.vertices[j], 10.0, small_env, CTRL, DD)
        assert r.reached and not r.collided
        assert r.duration == pytest.approx(rm.cost[k], abs=1e-9)


def test_build_deterministic(small_env, small_roadmap, tmp_path):
    again = build_roadmap(small_env, CTRL, DD, RoadmapParams())
    assert again.structurally_equal(small_roadmap)
    save_roadmap(small_roadmap, tmp_path / "a.rm")
    save_roadmap(again, tmp_path / "b.rm")
    assert (tmp_path / "a.rm").read_bytes() == (tmp_path / "b.rm").read_bytes()


def test_denser_grid_monotone(small_env):
    coarse = build_roadmap(small_env, CTRL, DD, RoadmapParams(grid_xy=1.0, grid_theta=math.pi))
    dense = build_roadmap(small_env, CTRL, DD, RoadmapParams(grid_xy=1.0, grid_theta=math.pi / 2))
    assert dense.n_vertices >= coarse.n_vertices
    assert dense.n_edges >= coarse.n_edges


def test_gap_fraction_positive(small_env, small_roadmap):
    rm = small_roadmap
    gaps = 0
    for k in range(0, rm.n_edges, 7):
        r = rollout_to_goal(lift_config(rm.vertices[rm.src[k]]), rm.vertices[rm.dst[k]], 10.0, small_env, CTRL, DD)
        end = r.trajectory.end
        q = rm.vertices[rm.dst[k]]
        gaps += K.config_distance(end[0], end[1], end[2], q[0], q[1], q[2], np.array([1.0, 0.5])) > 0
    assert gaps > 0


# --------------------------------------------------------------------- query insertion

def test_insert_query_overlay(small_env, small_roadmap):
    rm = small_roadmap
    before = (rm.vertices.copy(), rm.src.copy(), rm.cost.copy())
    x0 = np.array([1.3, 1.2, 0.2, 0.5, 0.0])
    view = insert_query(rm, x0, Configuration(5.6, 3.4, 1.0), small_env, CTRL, DD)
    assert view.n_vertices == rm.n_vertices + 2
    assert view.start_id == rm.n_vertices and view.goal_id == rm.n_vertices + 1
    # start is forward-only and goal backward-only
    assert not np.any(view.dst == view.start_id)
    assert not np.any(view.src == view.goal_id)
    assert np.any(view.src == view.start_id) and np.any(view.dst == view.goal_id)
    assert np.array_equal(before[0], rm.vertices) and np.array_equal(before[1], rm.src)
    assert np.array_equal(before[2], rm.cost)
    # forward edges are rolled out from x0 itself, not its rest state
    for d, c in view.out_edges(view.start_id):
        r = rollout_to_goal(x0, view.vertices[d], 10.0, small_env, CTRL, DD)
        assert r.reached and r.duration == pytest.approx(c, abs=1e-9)
    assert not view.warnings


def test_insert_query_coincident_start_inherits_edges(small_env, small_roadmap):
    rm = small_roadmap
    v = 10
    view = insert_query(rm, lift_config(rm.vertices[v]), Configuration(5.3, 3.2, 0.1), small_env, CTRL, DD)
    assert view.start_id == v
    assert view.n_vertices == rm.n_vertices + 1
    outs = {d for d, _ in view.out_edges(v)}
    assert {d for d, _ in rm.out_edges(v)} <= outs
    pairs = list(zip(view.src.tolist(), view.dst.tolist()))
    assert len(pairs) == len(set(pairs))


def test_sealed_goal():
    env = Environment((0, 12, 0, 8), (
        [[7, 2], [11, 2], [11, 2.4], [7, 2.4]], [[7, 5.6], [11, 5.6], [11, 6], [7, 6]],
        [[7, 2.4], [7.4, 2.4], [7.4, 5.6], [7, 5.6]], [[10.6, 2.4], [11, 2.4], [11, 5.6], [10.6, 5.6]]))
    rm = build_roadmap(env, CTRL, DD, RoadmapParams(grid_xy=1.0, grid_theta=math.pi))
    view = insert_query(rm, lift_config((2, 4, 0)), Configuration(9, 4, 0), env, CTRL, DD)
    wf = compute_wavefront(view)
    assert math.isinf(wf.value[view.start_id]) and wf.successor_of(view.start_id) is None
    inside = view.vertices[np.isfinite(wf.value)]
    assert len(inside) >= 1
    assert np.all((inside[:, 0] > 7.4) & (inside[:, 0] < 10.6) & (inside[:, 1] > 2.4) & (inside[:, 1] < 5.6))


def test_goal_pocket_without_milestones_warns():
    # pocket interior x 9.1-9.8, y 3.7-4.3 holds no grid point
    env = Environment((0, 12, 0, 8), (
        [[8.7, 3.3], [10.2, 3.3], [10.2, 3.7], [8.7, 3.7]], [[8.7, 4.3], [10.2, 4.3], [10.2, 4.7], [8.7, 4.7]],
        [[8.7, 3.7], [9.1, 3.7], [9.1, 4.3], [8.7, 4.3]], [[9.8, 3.7], [10.2, 3.7], [10.2, 4.3], [9.8, 4.3]]))
    rm = build_roadmap(env, CTRL, DD, RoadmapParams(grid_xy=1.0, grid_theta=math.pi, radius=3.0))
    view = insert_query(rm, lift_config((2, 4, 0)), Configuration(9.45, 4.0, 0), env, CTRL, DD)
    assert "goal has no incoming roadmap edges" in view.warnings
    wf = compute_wavefront(view)
    assert np.flatnonzero(np.isfinite(wf.value)).tolist() == [view.goal_id]


def test_insert_rejects_colliding_start(small_env, small_roadmap):
    with pytest.raises(ValueError):
        insert_query(small_roadmap, lift_config((3.5, 3.0, 0)), Configuration(1, 1, 0), small_env, CTRL, DD)


# --------------------------------------------------------------------- wavefront

def _graph(n, edges):
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    cost = np.array([e[2] for e in edges], dtype=np.float64)
    return view_of(RoadmapWithGaps(np.zeros((n, 3)), src, dst, cost))


def test_wavefront_goal_zero_and_chain():
    wf = compute_wavefront(_graph(3, [(0, 1, 2.0), (1, 2, 3.0)]), 2)
    assert wf.value[2] == 0.0
    assert wf.value[0] == 5.0 and wf.successor_of(0) == 1
    assert wf.successor_of(2) is None
    assert wf.path_from(0) == [0, 1, 2]


def test_wavefront_tie_breaks_to_lowest_id():
    wf = compute_wavefront(_graph(4, [(0, 2, 1.0), (0, 1, 1.0), (1, 3, 1.0), (2, 3, 1.0)]), 3)
    assert wf.successor_of(0) == 1


def test_successor_rules_differ():
    # 0 -> 1 is a long edge to a vertex next to the goal; 0 -> 2 is the shortest route
    g = _graph(4, [(0, 1, 9.0), (1, 3, 1.0), (0, 2, 2.0), (2, 3, 3.0)])
    assert compute_wavefront(g, 3).successor_of(0) == 2
    assert compute_wavefront(g, 3, rule="min_value").successor_of(0) == 1
    with pytest.raises(ValueError):
        compute_wavefront(g, 3, rule="bogus")


def test_unreachable_vertices():
    wf = compute_wavefront(_graph(3, [(1, 0, 1.0)]), 2)
    assert math.isinf(wf.value[0]) and wf.successor_of(0) is None


def _random_graph(rng):
    n = int(rng.integers(2, 51))
    m = int(rng.integers(0, min(300, n * (n - 1)) + 1))
    pairs = set()
    while len(pairs) < m:
        u, v = rng.integers(0, n, 2)
        if u != v:
            pairs.add((int(u), int(v)))
    edges = [(u, v, float(10.0 - rng.uniform(0.0, 10.0))) for u, v in sorted(pairs)]
    return n, edges, int(rng.integers(0, n))


def test_wavefront_random_graph_invariants():
    rng = np.random.default_rng(42)
    for _ in range(30):
        n, edges, goal = _random_graph(rng)
        g = _graph(n, edges)
        wf = compute_wavefront(g, goal)
        for u, v, c in edges:
            assert wf.value[u] <= c + wf.value[v]
        costs = {(u, v): c for u, v, c in edges}
        for v in range(n):
            s = wf.successor_of(v)
            assert (s is not None) == (math.isfinite(wf.value[v]) and v != goal)
            if s is not None:
                assert wf.value[v] == costs[(v, s)] + wf.value[s]
                path = wf.path_from(v)
                assert path[-1] == goal and len(path) <= n
                assert all(wf.value[a] > wf.value[b] for a, b in zip(path, path[1:]))


def test_wavefront_matches_enumeration_small():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, edges, goal = _random_graph(rng)
        wf = compute_wavefront(_graph(n, edges), goal)
        assert wf.value.tolist() == all_simple_path_costs(n, edges, goal)


# --------------------------------------------------------------------- serialization

def test_roundtrip(small_env, small_roadmap, tmp_path):
    p = tmp_path / "rm.bin"
    save_roadmap(small_roadmap, p)
    back = load_roadmap(p, small_env)
    assert back.structurally_equal(small_roadmap)
    h = read_roadmap_header(p)
    assert h["system"] == "diff_drive" and h["controller"]["k_rho"] == CTRL.k_rho
    assert h["params"]["t_max"] == 10.0 and h["format_version"] == 1


def test_env_hash_mismatch_rejected(small_env, small_roadmap, tmp_path):
    p = tmp_path / "rm.bin"
    save_roadmap(small_roadmap, p)
    raw = p.read_bytes()
    h = small_env.content_hash()
    p.write_bytes(raw.replace(h.encode(), ("0" * len(h)).encode()))
    with pytest.raises(RoadmapFormatError, match="hash"):
        load_roadmap(p, small_env)
    other = small_env.with_obstacles(())
    save_roadmap(small_roadmap, p)
    with pytest.raises(RoadmapFormatError):
        load_roadmap(p, other)


def test_malformed_files_rejected(small_roadmap, tmp_path):
    p = tmp_path / "rm.bin"
    p.write_bytes(b"not a roadmap")
    with pytest.raises(RoadmapFormatError):
        load_roadmap(p)
    save_roadmap(small_roadmap, p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(RoadmapFormatError, match="payload"):
        load_roadmap(p)
    save_roadmap(small_roadmap, p)
    p.write_bytes(p.read_bytes().replace(b'"format_version":1', b'"format_version":9'))
    with pytest.raises(RoadmapFormatError, match="version"):
        load_roadmap(p)


def test_large_roundtrip_fast(tmp_path):
    rng = np.random.default_rng(0)
    n, m = 2000, 10_000
    rm = RoadmapWithGaps(rng.uniform(0, 10, (n, 3)), rng.integers(0, n, m), rng.integers(0, n, m),
                         rng.uniform(0.02, 10, m), {"env_hash": "x"})
    t0 = time.perf_counter()
    save_roadmap(rm, tmp_path / "big.rm")
    back = load_roadmap(tmp_path / "big.rm")
    assert time.perf_counter() - t0 < 1.0
    assert back.structurally_equal(rm)
