import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from confdim.errors import PathCapError, UnsupportedExponentError
from confdim.modulus import (ModulusCache, brute_force_modulus, custom_family, decay_slope,
                             enumerate_paths, layer_upper_bound, mod_p_at_scale,
                             mod_p_at_scale_detail, modulus_by_flow, path_family, path_sums,
                             potential_density, sample_paths, solve_modulus, write_scale_csv)

from _families import chain, chain_parts, disjoint_union, filling_families, random_layered

PS = (1.0, 1.5, 2.0, 3.0)


def full_matrix(fam):
    paths = enumerate_paths(fam)
    A = np.zeros((len(paths), fam.n_vars))
    vi = fam.var_index
    for r, pth in enumerate(paths):
        cols = vi[list(pth)]
        A[r, np.unique(cols[cols >= 0])] = 1.0
    return A


def lp_oracle(fam):
    """p = 1 by HiGHS over every enumerated path."""
    A = full_matrix(fam)
    res = linprog(np.ones(A.shape[1]), A_ub=-A, b_ub=-np.ones(A.shape[0]), bounds=(0, None),
                  method="highs")
    return res.fun


def cvx_oracle(fam, p):
    cp = pytest.importorskip("cvxpy")
    A = full_matrix(fam)
    x = cp.Variable(A.shape[1], nonneg=True)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.power(x, p))), [A @ x >= 1])
    prob.solve(solver="CLARABEL")
    return prob.value


# closed forms -------------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 5, 12])
@pytest.mark.parametrize("p", PS)
def test_chain_closed_form(m, p):
    assert solve_modulus(chain(m), p).value == pytest.approx(m ** (1 - p), rel=1e-9)


def test_chain_density_is_uniform():
    res = solve_modulus(chain(4), 2.0)
    assert np.allclose(res.sigma, 0.25, atol=1e-9)


def test_disjoint_union_is_additive():
    fam = disjoint_union(chain_parts(3), chain_parts(5), chain_parts(2))
    for p in PS:
        want = 3 ** (1 - p) + 5 ** (1 - p) + 2 ** (1 - p)
        assert solve_modulus(fam, p).value == pytest.approx(want, rel=1e-8)


def test_single_vertex_paths_count_once_each():
    fam = custom_family({0: [], 1: [], 2: []}, [0, 1, 2], [0, 1, 2])
    assert solve_modulus(fam, 2.0).value == pytest.approx(3.0)


def test_empty_family():
    fam = custom_family({0: [], 1: []}, [0], [1])
    res = solve_modulus(fam, 2.0)
    assert res.value == 0.0 and res.status == "empty_family"


def test_bad_exponent():
    with pytest.raises(UnsupportedExponentError):
        solve_modulus(chain(3), 0.5)


# oracles ------------------------------------------------------------------

@pytest.fixture(scope="module")
def fams():
    return filling_families(7, 12)


def test_against_lp_oracle(fams):
    for fam in fams:
        assert solve_modulus(fam, 1.0).value == pytest.approx(lp_oracle(fam), rel=1e-7)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_against_conic_oracle(fams, p):
    for fam in fams[:6]:
        assert solve_modulus(fam, p).value == pytest.approx(cvx_oracle(fam, p), rel=1e-6)


def test_flow_matches_lp(fams):
    for fam in fams:
        assert modulus_by_flow(fam).value == pytest.approx(lp_oracle(fam), rel=1e-9, abs=1e-9)


@given(seed=st.integers(0, 10_000), layers=st.integers(2, 5), width=st.integers(1, 4),
       density=st.floats(0.2, 0.9))
def test_random_layered_matches_brute_force(seed, layers, width, density):
    fam = random_layered(np.random.default_rng(seed), layers, width, density)
    try:
        enumerate_paths(fam, 200)
    except PathCapError:
        return
    for p in (1.0, 2.0):
        a = solve_modulus(fam, p).value
        b = brute_force_modulus(fam, p).value
        assert a == pytest.approx(b, rel=1e-6, abs=1e-12)


@given(seed=st.integers(0, 10_000))
def test_result_is_admissible_and_consistent(seed):
    fam = random_layered(np.random.default_rng(seed), 4, 3, 0.6)
    res = solve_modulus(fam, 1.5)
    on_nodes = res.sigma_on_nodes()
    sums = path_sums(fam, on_nodes, enumerate_paths(fam))
    assert sums.min() >= 1.0 - 1e-6
    assert res.value == pytest.approx(float(np.sum(res.sigma ** 1.5)), rel=1e-12)


@given(seed=st.integers(0, 10_000))
def test_monotone_in_p(seed):
    fam = random_layered(np.random.default_rng(seed), 4, 3, 0.5)
    vals = [solve_modulus(fam, p).value for p in PS]
    assert all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(vals, vals[1:]))


@given(seed=st.integers(0, 10_000), p=st.sampled_from(PS))
def test_layer_bound_dominates(seed, p):
    fam = random_layered(np.random.default_rng(seed), 4, 3, 0.5)
    assert solve_modulus(fam, p).value <= layer_upper_bound(fam, p) * (1 + 1e-7) + 1e-12


def test_layer_bound_exact_on_chain():
    for p in PS:
        assert layer_upper_bound(chain(6), p) == pytest.approx(6 ** (1 - p))


def test_enumeration_cap():
    fam = random_layered(np.random.default_rng(0), 6, 4, 1.0)
    with pytest.raises(PathCapError):
        enumerate_paths(fam, 5)


def test_enumeration_skips_dead_ends_quickly():
    # complete graph on 12 vertices with no reachable sink: no paths, no blow-up
    adj = {i: [j for j in range(12) if j != i] for i in range(12)}
    adj[12] = []
    fam = custom_family(adj, [0], [12])
    assert enumerate_paths(fam, 10) == []


# filling families ---------------------------------------------------------

def _nonempty(graph, level, k):
    for v in graph.level_vertices(level):
        fam = path_family(graph, int(v), k)
        if not fam.is_empty():
            return int(v), fam
    raise AssertionError("no nonempty family")


def test_path_family_shape(grid_graph):
    v, fam = _nonempty(grid_graph, 2, 2)
    assert fam.is_source.any() and fam.is_sink.any()
    # sinks are terminal
    assert np.all(np.diff(fam.indptr)[fam.is_sink] == 0)
    with pytest.raises(ValueError):
        path_family(grid_graph, v, 0)


def test_unrestricted_support_is_not_smaller(grid_graph):
    v, fam = _nonempty(grid_graph, 2, 1)
    a = solve_modulus(fam, 2.0).value
    b = solve_modulus(path_family(grid_graph, v, 1, restrict_support=False), 2.0).value
    assert b >= a - 1e-9


def test_potential_density_brackets(grid_graph):
    v, fam = _nonempty(grid_graph, 2, 2)
    sigma, paths, amounts, _ = potential_density(fam, 2.0)
    exact = solve_modulus(fam, 2.0, method="cutting_plane").value
    assert float(np.sum(sigma ** 2)) >= exact * (1 - 1e-7)


def test_pruning_keeps_the_maximum(grid_graph):
    for p in (1.0, 2.0):
        a = mod_p_at_scale_detail(grid_graph, p, 2, ModulusCache(), prune=False)
        b = mod_p_at_scale_detail(grid_graph, p, 2, ModulusCache(), prune=True)
        assert b.value == pytest.approx(a.value, rel=1e-9)
        for (va, xa, _, _), (vb, xb, _, sb) in zip(a.per_vertex, b.per_vertex):
            assert va == vb
            assert xb >= xa * (1 - 1e-6) if sb == "pruned" else xb == pytest.approx(xa, rel=1e-7)


def test_cache_hits_and_monotonicity(grid_graph):
    cache = ModulusCache()
    mod_p_at_scale(grid_graph, 1.0, 1, cache)
    misses = cache.misses
    mod_p_at_scale(grid_graph, 1.0, 1, cache)
    assert cache.misses == misses and cache.hits > 0
    mod_p_at_scale(grid_graph, 2.0, 1, cache)
    assert cache.monotonicity_violations == []


def test_sample_paths_are_family_paths(rng):
    fam = random_layered(rng, 4, 3, 0.6)
    allp = set(enumerate_paths(fam))
    for pth in sample_paths(fam, 20, rng):
        assert pth in allp


def test_decay_slope():
    assert decay_slope([8, 4, 2, 1], [1, 2, 3, 4]) == pytest.approx(-math.log(2))
    assert decay_slope([1, 1, 1], [1, 2, 3]) == pytest.approx(0.0)


def test_scale_csv(tmp_path, grid_graph):
    res = [mod_p_at_scale_detail(grid_graph, 1.0, 1)]
    out = tmp_path / "m.csv"
    write_scale_csv(out, grid_graph, res)
    lines = out.read_text().splitlines()
    assert lines[0] == "v_point,v_level,k,p,modulus,iterations,status"
    assert len(lines) == 1 + len(res[0].per_vertex)
