import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from confdim.errors import ConstantsError, ParameterError
from confdim.nets_filling import Combinatorics
from confdim.weight_pipeline import (ConstantsRecord, Recorder, WeightSystem, build_sigma, derive_phi, derived_constants,
                                     inductive_pi0, lift_mu1, run_pipeline, theory_epsilon,
                                     tree_product)


def ancestors(ws, v):
    out = []
    while v >= 0:
        out.append(v)
        v = int(ws.parent[v])
    return out


@pytest.fixture(params=["cantor", "carpet"])
def ws(request, cantor_ws, carpet_ws):
    return cantor_ws if request.param == "cantor" else carpet_ws


def test_children_carry_unit_mass(ws):
    p = ws.constants.p
    for v in range(ws.n_vertices):
        ch = np.flatnonzero(ws.parent == v)
        if ch.size:
            assert np.sum(ws.rho[ch] ** p) == pytest.approx(1.0, abs=1e-9)


def test_pi_is_product_along_ancestry(ws):
    for v in range(0, ws.n_vertices, 7):
        want = np.prod([ws.rho[u] for u in ancestors(ws, v) if ws.parent[u] >= 0])
        assert ws.pi[v] == pytest.approx(want, rel=1e-12)


def test_rho_within_bounds(ws):
    c = ws.constants
    kids = ws.parent >= 0
    wv = ws.w_v[ws.w_v >= 0]
    others = kids.copy()
    others[wv] = False
    assert ws.rho[kids].min() >= c.eta_minus * (1 - 1e-12)
    # siblings of the direct descendant keep phi, which stays below eta_plus
    assert ws.rho[others].max() <= c.eta_plus * (1 + 1e-12)
    # the direct descendant absorbs the rest of the unit mass
    assert ws.rho[wv].max() < 1.0
    assert ws.rho[wv].max() <= c.rho_upper


def test_direct_descendant_is_tree_child(ws):
    for v in range(ws.n_vertices):
        w = int(ws.w_v[v])
        if w >= 0:
            assert ws.parent[w] == v and ws.point[w] == ws.point[v]


def test_chain_mu_phi(ws):
    c = ws.constants
    assert np.allclose(ws.mu1, (ws.sigma ** c.p + c.eta_minus ** c.p) ** (1 / c.p))
    assert np.all(ws.mu2 >= 2 * ws.mu1 * (1 - 1e-12))


def test_recorded_checks(cantor_ws, carpet_ws):
    assert [c["name"] for c in cantor_ws.checks if not c["ok"]] == []
    # carpet(2) with n0=2 misses the resampling condition and needs the density
    # rescaling; both are recorded, nothing else may fail
    bad = {c["name"] for c in carpet_ws.checks if not c["ok"]}
    assert bad == {"constants_n0", "sigma_modulus_below_eps0"}


def test_json_roundtrip_is_byte_identical(carpet_ws):
    text = carpet_ws.dumps()
    again = WeightSystem.loads(text)
    assert again.dumps() == text
    assert np.array_equal(again.rho, carpet_ws.rho)
    doc = json.loads(text)
    assert "timestamp" not in text and doc["constants"]["p"] == 2.0


def test_lift_mu1_closed_form():
    s = np.array([0.0, 1.0, 2.0])
    assert np.allclose(lift_mu1(s, 1.0, 2.0), np.sqrt(s ** 2 + 1))


def test_inductive_pi0_rule(carpet_tree):
    g = carpet_tree
    rng = np.random.default_rng(3)
    mu2 = rng.uniform(0.5, 4.0, g.n_vertices)
    K = 3.0
    res = inductive_pi0(mu2, g, K)
    assert res.pi0[g.root] == 1.0
    for v in range(1, g.n_vertices):
        assert res.pi1[v] == pytest.approx(mu2[v] * res.pi0[g.tree_parent[v]], rel=1e-14)
        nb = g.h_neighbors(v)
        hit = nb.size and any(res.pi1[u] > K * res.pi1[v] for u in nb)
        want = max(res.pi1[u] for u in nb) / K if hit else res.pi1[v]
        assert res.pi0[v] == pytest.approx(want, rel=1e-14)
        assert bool(res.inbound[v]) == bool(hit)
    phi = derive_phi(res.pi0, g)
    assert np.allclose(tree_product(phi, g), res.pi0, rtol=1e-12)
    with pytest.raises(ParameterError):
        inductive_pi0(mu2, g, 1.0)


@given(st.floats(1.0, 4.0), st.integers(1, 50), st.integers(1, 30))
def test_theory_epsilon_below_half(p, N1, N2):
    eps = theory_epsilon(p, N1, N2)
    assert eps == pytest.approx(0.5 / (2 ** (p + 2) * (N2 + N1 + 1) ** 2))


def test_constants_roundtrip():
    c = derived_constants(2.0, 3.0, 7.0, 2.0, 4, 5, 6, 4)
    assert ConstantsRecord.from_dict(c.to_dict()) == c
    assert c.K1 == pytest.approx(c.K0 ** 6 * (c.K0 + 1))
    assert all(isinstance(v, bool) for v in c.conditions().values())


def test_oversized_epsilon_is_rejected(carpet_tree):
    with pytest.raises(ConstantsError):
        run_pipeline(carpet_tree, 2.0, epsilon=0.9, rescale=False)


def test_theory_mode_rejects_large_modulus(carpet_tree):
    with pytest.raises(ConstantsError, match="not below epsilon0"):
        build_sigma(carpet_tree, 2.0, 1e-9, mode="theory", recorder=Recorder("theory"))


def test_practical_mode_rescales(carpet_tree):
    res = build_sigma(carpet_tree, 2.0, 1e-6, rescale=True)
    assert res.sigma.max() > 0
    scaled = [r for r in res.per_vertex if r["modulus"] >= 1e-6]
    assert scaled and all(r["scale"] < 1 for r in scaled)


def test_sigma_meets_its_admissibility_level(carpet_ws):
    level = {r["vertex"]: r["scale"] for r in carpet_ws.sigma_report}
    for base, paths in carpet_ws.family_paths.items():
        for pth in paths:
            assert carpet_ws.sigma[list(pth)].sum() >= level[int(base)] * (1 - 1e-6)
