import numpy as np
import pytest
from hypothesis import given, strategies as st

from confdim import _kernels
from confdim.errors import InsufficientDepthError, ParameterError
from confdim.metric_spaces import from_coords, generate_grid
from confdim.nets_filling import (Combinatorics, attach_tree, audit_nets, build_graph, build_nets,
                                  check_cross_parent_adjacency, check_tree, edge_list_lines,
                                  graph_summary, n0_condition, resample_graph)


def cloud(seed, n=40):
    return from_coords(np.random.default_rng(seed).random((n, 2)))


@given(st.integers(0, 1000), st.floats(2.0, 4.0))
def test_nets_are_nested_separated_maximal(seed, alpha):
    nets = build_nets(cloud(seed), alpha, 5)
    assert audit_nets(nets)["ok"]
    assert nets.levels[0].tolist() == [0]


def test_greedy_kernels_agree(rng):
    D = from_coords(rng.random((200, 2))).dist
    acc = np.zeros(200, dtype=np.bool_)
    acc[0] = True
    ref = _kernels.BACKENDS["numpy"]["greedy_extend"](D, acc, 0.05)
    for table in _kernels.BACKENDS.values():
        assert np.array_equal(table["greedy_extend"](D, acc, 0.05), ref)


def test_edges_match_definition(grid_graph):
    g = grid_graph
    D = g.space.dist
    for v in range(g.n_vertices):
        k = int(g.level[v])
        r = float(g.radius(k))
        same = g.level_vertices(k)
        want = [int(u) for u in same if u != v and D[g.point[v], g.point[u]] < 2 * g.tau * r * (1 - 1e-12)]
        assert sorted(g.h_neighbors(v).tolist()) == want
        if k < g.depth:
            nxt = g.level_vertices(k + 1)
            rc = float(g.radius(k + 1))
            want = [int(u) for u in nxt if D[g.point[v], g.point[u]] < (r + rc) * (1 - 1e-12)]
            assert sorted(g.children(v).tolist()) == want


def test_horizontal_adjacency_symmetric(grid_graph):
    g = grid_graph
    for v in range(g.n_vertices):
        for u in g.h_neighbors(v):
            assert v in g.h_neighbors(u)


def test_tree_is_spanning(grid_graph):
    g = attach_tree(grid_graph)
    rep = check_tree(g)
    assert rep["ok"] and rep["components"] == 1
    assert check_cross_parent_adjacency(g)["ok"] if "ok" in check_cross_parent_adjacency(g) else True


def test_removed_tree_edge_is_caught(grid_graph):
    g = attach_tree(grid_graph)
    par = g.tree_parent.copy()
    victim = int(g.level_vertices(2)[1])
    par[victim] = -1
    rep = check_tree(g.with_tree_parent(par))
    assert not rep["ok"] and victim in rep["orphans"]
    assert rep["components"] > 1


def test_parent_is_nearest_previous_net_point(grid_graph):
    g = attach_tree(grid_graph)
    D = g.space.dist
    for v in range(1, g.n_vertices):
        prev = g.level_vertices(int(g.level[v]) - 1)
        d = D[g.point[v], g.point[prev]]
        assert D[g.point[v], g.point[g.tree_parent[v]]] == d.min()


def test_resampling_keeps_every_n0th_level(grid33):
    nets = build_nets(grid33, 2.0, 4)
    g2 = resample_graph(nets, 2, 7.0)
    assert g2.depth == 2
    assert np.array_equal(g2.point[g2.level_vertices(1)], nets.levels[2])
    assert g2.radius(1) == pytest.approx(0.25)
    with pytest.raises(InsufficientDepthError):
        resample_graph(nets, 5, 7.0)


def test_n0_condition_values():
    ok, lo, hi = n0_condition(3.0, 7.0, 4)
    a = 3.0 ** -4
    assert ok and lo == pytest.approx(6 + 4 * a + 56 * a) and hi == pytest.approx(81 / 4)
    assert not n0_condition(2.0, 7.0, 2)[0]


def test_parameter_checks(grid33):
    with pytest.raises(ParameterError):
        build_nets(grid33, 1.0, 3)
    nets = build_nets(grid33, 2.0, 3)
    with pytest.raises(ParameterError):
        build_graph(nets, 5.0)
    with pytest.raises(ParameterError):
        build_nets(grid33, 2.0, 3, K_d=2.0, mode="theory")


def test_combinatorics_sets(carpet_tree):
    g = carpet_tree
    comb = Combinatorics(g)
    for v in range(g.n_vertices):
        S, SI = comb.S(v), comb.SI(v)
        assert v in S and set(SI) <= set(S)
        d1 = comb.D_j(v, 1)
        assert np.array_equal(d1, np.sort(g.tree_children(v)))
        if g.level[v] < g.depth:
            w = comb.w_v(v)
            assert g.point[w] == g.point[v] and g.tree_parent[w] == v
    assert comb.M >= 1


def test_summary_and_edges(grid_graph):
    s = graph_summary(grid_graph)
    assert s["vertices"] == grid_graph.n_vertices
    lines = edge_list_lines(attach_tree(grid_graph))
    tags = {ln.rsplit(" ", 1)[1] for ln in lines}
    assert tags <= {"H", "T", "V"} and "T" in tags
