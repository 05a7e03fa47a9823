import numpy as np
import pytest

from giph.domain import (DataLink, Device, DeviceNetwork, Placement,
                         ProblemInstance, Task, TaskGraph, random_placement)
from giph.gpnet import (build_gpnet, compose_edge_features,
                        compose_node_features)
from giph.simulator import (LatencyModel, expected_compute_time, simulate)
from helpers import chain_instance, random_small_instance, two_task_instance


def gp_for(inst, placement):
    trace = simulate(inst, placement)
    return build_gpnet(inst, placement, trace), trace


def expected_sizes(inst):
    g = inst.graph
    n_nodes = sum(len(s) for s in inst.feasible_sets)
    degree = [len(g.parents[v]) + len(g.children[v]) for v in range(g.n_tasks)]
    n_edges = sum(len(inst.feasible_sets[v]) * degree[v]
                  for v in range(g.n_tasks)) - g.n_edges
    return n_nodes, n_edges


def test_sizes_two_task_instance():
    inst = two_task_instance()
    gp, _ = gp_for(inst, Placement((0, 1)))
    assert gp.n_nodes == 4
    assert gp.n_edges == (2 * 1 + 2 * 1) - 1 == 3


def test_sizes_unconstrained():
    graph = TaskGraph(
        [Task(i, 1.0) for i in range(5)],
        [DataLink(0, 1, 1.0), DataLink(0, 2, 1.0), DataLink(1, 3, 1.0),
         DataLink(2, 3, 1.0), DataLink(1, 4, 1.0), DataLink(3, 4, 1.0)])
    net = DeviceNetwork([Device(k, 1.0) for k in range(3)],
                        np.full((3, 3), 5.0), np.zeros((3, 3)))
    inst = ProblemInstance(graph, net)
    gp, _ = gp_for(inst, Placement((0, 0, 0, 0, 0)))
    assert gp.n_nodes == 15
    assert gp.n_edges == 3 * 12 - 6 == 30


def test_size_formulas_random_pairs():
    for seed in range(200):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, _ = gp_for(inst, p)
        n, m = expected_sizes(inst)
        assert gp.n_nodes == n and gp.n_edges == m


def test_every_edge_touches_a_pivot():
    for seed in range(40):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, _ = gp_for(inst, p)
        piv = gp.is_pivot
        assert np.all(piv[gp.edge_src] | piv[gp.edge_dst])


def test_pivot_subgraph_isomorphic_to_graph():
    for seed in range(40):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, _ = gp_for(inst, p)
        assert int(gp.is_pivot.sum()) == inst.graph.n_tasks
        pivot_edges = {(int(gp.node_task[s]), int(gp.node_task[d]))
                       for s, d in zip(gp.edge_src, gp.edge_dst)
                       if gp.is_pivot[s] and gp.is_pivot[d]}
        graph_edges = {(e.src, e.dst) for e in inst.graph.edges}
        assert pivot_edges == graph_edges
        for v in range(inst.graph.n_tasks):
            u = gp.pivot_node[v]
            assert gp.node_device[u] == p.assignment[v]


def test_gpnet_is_acyclic():
    for seed in range(20):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, _ = gp_for(inst, p)
        topo_pos = {v: i for i, v in enumerate(inst.graph.topo_order)}
        for s, d in zip(gp.edge_src, gp.edge_dst):
            assert topo_pos[int(gp.node_task[s])] < topo_pos[int(gp.node_task[d])]


def test_node_feature_compute_time_channel():
    for seed in range(20):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, trace = gp_for(inst, p)
        for u in range(gp.n_nodes):
            v, d = int(gp.node_task[u]), int(gp.node_device[u])
            assert gp.node_features_raw[u, 2] == pytest.approx(
                expected_compute_time(inst, v, d))
            row = compose_node_features(inst, v, d, trace)
            np.testing.assert_allclose(row, gp.node_features_raw[u], atol=1e-12)


def test_entry_start_potential_zero():
    inst = two_task_instance()
    p = Placement((0, 1))
    gp, trace = gp_for(inst, p)
    entry = inst.graph.entry
    for d in inst.feasible_sets[entry]:
        assert compose_node_features(inst, entry, d, trace)[3] == 0.0


def test_start_potential_hand_computed_chain():
    # Chain v0 -> v1 -> v2 all on device 0 (speed 1); candidate device 1.
    inst = chain_instance(computes=(2.0, 2.0, 2.0), speeds=(1.0, 2.0),
                          bytes_=10.0, bandwidth=5.0, delay=1.0)
    p = Placement((0, 0, 0))
    gp, trace = gp_for(inst, p)
    # Trace: v0 [0,2), v1 [2,4), v2 [4,6).
    # v1 on candidate d1: EST = t_done(v0) + (1 + 10/5) = 5, stp = 5 - 2 = 3.
    assert compose_node_features(inst, 1, 1, trace)[3] == pytest.approx(3.0)
    # Pivot of v1: EST = t_done(v0) + 0 = 2, stp = 0.
    assert compose_node_features(inst, 1, 0, trace)[3] == pytest.approx(0.0)


def test_infeasible_node_feature_pair_rejected():
    inst = two_task_instance()
    p = Placement((0, 1))
    _, trace = gp_for(inst, p)
    with pytest.raises(ValueError):
        compose_node_features(inst, 0, 2, trace)   # device 2 unsupported for v0


def test_edge_features_cross_and_local():
    inst = chain_instance(bytes_=10.0, bandwidth=5.0, delay=1.0)
    cross = compose_edge_features(inst, 0, 0, 1)
    np.testing.assert_allclose(cross, [10.0, 5.0, 1.0, 3.0])
    local = compose_edge_features(inst, 0, 1, 1)
    assert local[3] == 0.0 and local[2] == 0.0
    assert local[1] == inst.network.max_finite_bandwidth
    assert len(cross) == len(local) == 4


def test_edge_feature_matrix_matches_compose():
    for seed in range(20):
        inst = random_small_instance(seed)
        p = random_placement(inst, np.random.default_rng(seed))
        gp, _ = gp_for(inst, p)
        for e in range(gp.n_edges):
            row = compose_edge_features(
                inst, int(gp.edge_graph[e]),
                int(gp.node_device[gp.edge_src[e]]),
                int(gp.node_device[gp.edge_dst[e]]))
            np.testing.assert_allclose(row, gp.edge_features_raw[e], atol=1e-12)


def test_rebuild_locality_after_action():
    rng = np.random.default_rng(0)
    for seed in range(30):
        inst = random_small_instance(seed)
        p = random_placement(inst, rng)
        gp, _ = gp_for(inst, p)
        movable = [v for v in range(inst.graph.n_tasks)
                   if len(inst.feasible_sets[v]) > 1]
        if not movable:
            continue
        v = movable[int(rng.integers(len(movable)))]
        choices = [d for d in inst.feasible_sets[v] if d != p.assignment[v]]
        d = choices[int(rng.integers(len(choices)))]
        p2 = p.with_move(v, d)
        gp2, _ = gp_for(inst, p2)

        flips = np.flatnonzero(gp.is_pivot != gp2.is_pivot)
        lo, hi = gp.option_slices[v]
        assert len(flips) == 2 and all(lo <= u < hi for u in flips)

        before = set(zip(gp.edge_src.tolist(), gp.edge_dst.tolist()))
        after = set(zip(gp2.edge_src.tolist(), gp2.edge_dst.tolist()))
        neighbors = set(inst.graph.parents[v]) | set(inst.graph.children[v])
        allowed_nodes = set(range(lo, hi))
        allowed_nodes |= {int(gp.pivot_node[w]) for w in neighbors}
        allowed_nodes |= {int(gp2.pivot_node[w]) for w in neighbors}
        for s, dd in before ^ after:
            assert s in allowed_nodes or dd in allowed_nodes


def test_mismatched_trace_rejected():
    inst = two_task_instance()
    trace = simulate(inst, Placement((0, 1)))
    with pytest.raises(ValueError):
        build_gpnet(inst, Placement((1, 1)), trace)


def test_noisy_trace_rejected():
    inst = two_task_instance()
    p = Placement((0, 1))
    noisy = simulate(inst, p, LatencyModel(0.2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_gpnet(inst, p, noisy)


def test_standardized_channels_have_unit_mean_magnitude():
    inst = two_task_instance()
    gp, _ = gp_for(inst, Placement((0, 1)))
    mags = np.abs(gp.node_features).mean(axis=0)
    nonzero = np.abs(gp.node_features_raw).mean(axis=0) > 1e-12
    np.testing.assert_allclose(mags[nonzero], 1.0, rtol=1e-6)
    assert np.all(np.isfinite(gp.node_features))
    assert np.all(np.isfinite(gp.edge_features))


def test_debug_dump():
    inst = two_task_instance()
    gp, _ = gp_for(inst, Placement((0, 1)))
    d = gp.to_dict()
    assert d["format"] == "giph-gpnet-v1"
    assert len(d["nodes"]) == 4 and len(d["edges"]) == 3
    assert sum(n["is_pivot"] for n in d["nodes"]) == 2
    assert all(len(n["features"]) == 4 for n in d["nodes"])
