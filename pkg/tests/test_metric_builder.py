import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from confdim.errors import DomainError
from confdim.metric_builder import (ancestry_chain, boundary_metric, compute_z, distance_bounds,
                                    edge_list, ell_edge, export_metric, graph_distance, load_metric,
                                    metric_audit, path_integral, sample_pairs)


def floyd(ws, max_level):
    """Dense all-pairs oracle over the truncated graph."""
    n = ws.n_vertices
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    keep = ws.level <= max_level
    for v in range(n):
        if not keep[v]:
            continue
        for u in list(ws.h_neighbors(v)) + list(ws.children(v)):
            if keep[u]:
                w = 0.5 * (ws.pi[u] + ws.pi[v])
                D[u, v] = D[v, u] = min(D[u, v], w)
    for k in range(n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return D


def test_boundary_metric_matches_floyd(carpet_ws):
    depth = 1
    bm = boundary_metric(carpet_ws, depth)
    F = floyd(carpet_ws, depth)
    vs = carpet_ws.level_vertices(depth)
    assert np.allclose(bm.matrix, F[np.ix_(vs, vs)], rtol=1e-12)


def test_metric_axioms(carpet_ws):
    bm = boundary_metric(carpet_ws)
    assert np.array_equal(bm.matrix, bm.matrix.T)
    assert np.all(np.diag(bm.matrix) == 0)
    a = metric_audit(bm)
    assert a.ok and a.exhaustive


def test_tail_bound(carpet_ws):
    bm = boundary_metric(carpet_ws, 1)
    r = bm.meta["max_rho"]
    assert bm.tail_bound == pytest.approx(r ** 2 / (1 - r))


def test_graph_distance_path_is_consistent(carpet_ws):
    u, v = carpet_ws.level_vertices(carpet_ws.depth)[[0, -1]]
    d, path = graph_distance(carpet_ws, int(u), int(v))
    assert path[0] == u and path[-1] == v
    assert path_integral(carpet_ws, path) == pytest.approx(d, rel=1e-12)


def test_edge_kinds(carpet_ws):
    a, b, kind = edge_list(carpet_ws)
    tree = kind == 1
    assert np.all(carpet_ws.parent[b[tree]] == a[tree])
    assert np.all(carpet_ws.level[a[kind == 0]] == carpet_ws.level[b[kind == 0]])
    assert tree.sum() == carpet_ws.n_vertices - 1


def test_z_lies_on_an_ancestry_chain(carpet_ws):
    rng = np.random.default_rng(0)
    deep = carpet_ws.level_vertices(carpet_ws.depth)
    for _ in range(40):
        u, v = (int(x) for x in rng.choice(deep, 2, replace=False))
        z = compute_z(carpet_ws, u, v)
        assert z in ancestry_chain(carpet_ws, u) or z in ancestry_chain(carpet_ws, v)
    assert compute_z(carpet_ws, int(deep[0]), int(deep[0])) == deep[0]


def test_ell_edges(carpet_ws):
    ws = carpet_ws
    v = int(ws.level_vertices(2)[0])
    par = int(ws.parent[v])
    assert ell_edge(ws, v, par) == pytest.approx(ws.constants.K0 ** 2 * ws.pi_star[v])
    nb = int(ws.h_neighbors(v)[0])
    assert ell_edge(ws, v, nb) == min(ws.pi_star[v], ws.pi_star[nb])
    other_parents = [int(u) for u in range(ws.n_vertices) if v in ws.children(u) and u != par]
    if other_parents:
        with pytest.raises(DomainError):
            ell_edge(ws, v, other_parents[0])


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_export_roundtrip(tmp_path, carpet_ws, fmt):
    bm = boundary_metric(carpet_ws)
    text = export_metric(bm, tmp_path / f"m.{fmt}", fmt)
    back = load_metric(tmp_path / f"m.{fmt}", fmt)
    assert np.array_equal(back.dist, bm.matrix)
    assert export_metric(bm, None, fmt) == text


@given(st.integers(2, 200), st.integers(0, 1000))
def test_sample_pairs_distinct(n, seed):
    pairs = sample_pairs(n, np.random.default_rng(seed), exhaustive_max=50, n_samples=30)
    arr = np.asarray(pairs)
    assert np.all(arr[:, 0] != arr[:, 1])
    if n * (n - 1) // 2 <= 50:
        assert len(pairs) == n * (n - 1) // 2


def test_distance_bounds_hold(cantor_ws, carpet_ws):
    for ws in (cantor_ws, carpet_ws):
        db = distance_bounds(ws, np.random.default_rng(42))
        assert db.ok and db.pairs >= 1000
        assert db.K1_empirical <= db.K1
