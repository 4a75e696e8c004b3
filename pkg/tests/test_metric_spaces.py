import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from confdim import _kernels
from confdim.errors import DegenerateSpaceError, DomainError, SizeError
from confdim.metric_spaces import (audit_metric, estimate_constants, from_coords, from_matrix,
                                   generate_cantor, generate_carpet, generate_grid, load_space,
                                   normalize, save_space, snowflake, space_from_json,
                                   uniform_perfectness_constant)

coords = arrays(np.float64, st.tuples(st.integers(3, 25), st.integers(1, 3)),
                elements=st.floats(-10, 10, allow_nan=False, width=64), unique=False)


@given(coords)
def test_from_coords_is_a_metric(X):
    if np.unique(X, axis=0).shape[0] < X.shape[0]:
        with pytest.raises(DegenerateSpaceError):
            from_coords(X)
        return
    try:
        s = from_coords(X)
    except DegenerateSpaceError:
        # only legitimate when some separation is below what float64 can carry
        gaps = np.abs(X[:, None, :] - X[None, :, :]).max(axis=-1)
        assert gaps[gaps > 0].min() / gaps.max() < 1e-300
        return
    audit = audit_metric(s.dist)
    assert audit.symmetric and audit.zero_diagonal and audit.positive
    assert audit.triangle_worst <= 0.0
    assert s.dist.max() == 0.5


@given(coords)
def test_normalize_is_idempotent(X):
    try:
        s = from_coords(X)
    except DegenerateSpaceError:
        return  # rejection itself is covered above
    assert np.array_equal(normalize(s).dist, s.dist)


def test_generators_sizes_and_diameter():
    assert generate_cantor(5).n == 32
    assert generate_carpet(2).n == 64
    assert generate_grid(17).n == 17
    for s in (generate_cantor(4), generate_carpet(1), generate_grid(9)):
        assert s.diameter == 0.5


def test_cantor_gaps():
    # consecutive left endpoints of cantor(2) on [0,1]: 0, 2/9, 2/3, 8/9 -> scaled by 1/(2 * 8/9)
    s = generate_cantor(2)
    pts = s.dist[0]
    assert np.allclose(sorted(pts), np.array([0, 2 / 9, 2 / 3, 8 / 9]) * (0.5 / (8 / 9)))


def test_carpet_uses_sup_metric():
    s = generate_carpet(1)
    # cells (0,0),(1,0) are side neighbours and (0,1),(1,2) diagonal ones: both at 1/3
    D = s.dist * (2 * (2 / 3))
    assert np.isclose(D[0, 3], 1 / 3) and np.isclose(D[1, 4], 1 / 3)


def test_grid_is_equispaced():
    s = generate_grid(5)
    assert np.allclose(s.dist[0], np.linspace(0, 0.5, 5))


@given(st.floats(0.05, 1.0))
def test_snowflake_powers_distances(e):
    s = generate_grid(9)
    t = snowflake(s, e)
    ratio = t.dist[0, 1:] / t.dist[0, -1]
    assert np.allclose(ratio, (s.dist[0, 1:] / s.dist[0, -1]) ** e)
    assert audit_metric(t.dist).ok


def test_domain_errors():
    with pytest.raises(DomainError):
        snowflake(generate_grid(4), 1.5)
    with pytest.raises(DomainError):
        generate_cantor(3, 0.6)
    with pytest.raises(DomainError):
        generate_grid(1)
    with pytest.raises(SizeError):
        generate_cantor(14)
    with pytest.raises(DegenerateSpaceError):
        estimate_constants(from_matrix([[0.0]]))


def test_audit_catches_bad_matrices():
    D = np.array([[0, 1, 5], [1, 0, 1], [5, 1, 0]], dtype=float)
    a = audit_metric(D)
    assert not a.ok and a.triangle_witness[:2] in ((0, 2), (2, 0))
    D2 = D.copy()
    D2[0, 1] = 2
    assert not audit_metric(D2).symmetric


def test_triangle_kernels_agree(rng):
    X = rng.random((60, 2))
    D = from_coords(X).dist.copy()
    D[3, 7] = D[7, 3] = D[3, 7] * 3
    a = _kernels.BACKENDS["numpy"]["triangle_worst"](D)
    for table in _kernels.BACKENDS.values():
        b = table["triangle_worst"](D)
        assert b[0] == pytest.approx(a[0])


def test_uniform_perfectness_closed_form():
    # points 0, 1, 3 on a line: from 0 the ratios of sorted distances are 3; from 3 it is 3/2
    D = np.abs(np.subtract.outer([0.0, 1.0, 3.0], [0.0, 1.0, 3.0]))
    K, _ = uniform_perfectness_constant(D)
    assert K == pytest.approx(3.0)


def test_estimate_constants_grid():
    c = estimate_constants(generate_grid(65))
    assert 2 <= c.doubling_N <= 5
    assert c.N1 == c.doubling_N ** 6
    assert c.K_d >= 1.0


def test_json_roundtrip(tmp_path):
    s = generate_carpet(1)
    p = save_space(s, tmp_path / "s.json")
    t = load_space(p, normalize_=False)
    assert t.point_ids == s.point_ids and np.array_equal(t.dist, s.dist)
    doc = json.loads(p.read_text())
    doc["extra"] = {"ignored": True}
    assert np.array_equal(space_from_json(doc, False).dist, s.dist)


def test_json_coords_form():
    s = space_from_json({"coords": [[0, 0], [3, 4]], "metric": "euclidean"})
    assert s.dist[0, 1] == 0.5
    with pytest.raises(ValueError):
        space_from_json({"points": [1, 2]})
