import json

import numpy as np
import pytest

from confdim.metric_builder import boundary_metric
from confdim.verification import (SECTIONS, certify_all, certify_H, certify_H1, certify_H2,
                                  certify_normalization, certify_tree_H4, dumps, recheck,
                                  regularity_profile)
from confdim.weight_pipeline import WeightSystem


@pytest.fixture(scope="module")
def carpet_report(carpet_ws, carpet2):
    return certify_all(carpet_ws, space=carpet2)


def test_all_sections_present(carpet_report):
    assert set(carpet_report["sections"]) == set(SECTIONS)
    assert carpet_report["ok"]
    for name in ("H1", "normalization", "tree_H4", "H2", "H3"):
        assert carpet_report["sections"][name]["status"] == "pass"


def test_report_is_reproducible(carpet_ws, carpet2, carpet_report):
    again = WeightSystem.loads(carpet_ws.dumps())
    assert dumps(certify_all(again, space=carpet2)) == dumps(carpet_report)
    json.loads(dumps(carpet_report))


def test_normalization_fault_has_witness(carpet_ws):
    ws = carpet_ws
    w = int(ws.level_vertices(ws.depth)[5])
    rho = ws.rho.copy()
    rho[w] *= 1.1
    bad = ws.copy_with(rho=rho)
    rep = certify_normalization(bad)
    assert rep["status"] == "fail"
    assert rep["witness"] == {"parent": int(ws.parent[w]), "vertex": w}
    assert recheck(bad, "normalization", rep["witness"])
    assert not recheck(ws, "normalization", rep["witness"])


def test_h1_fault(carpet_ws):
    rho = carpet_ws.rho.copy()
    v = int(carpet_ws.level_vertices(1)[0])
    rho[v] = 1.5
    rep = certify_H1(carpet_ws.copy_with(rho=rho))
    assert rep["status"] == "fail" and rep["witness"]["vertex"] == v


def test_tree_h4_fault(carpet_ws):
    pi = carpet_ws.pi.copy()
    v = int(carpet_ws.level_vertices(carpet_ws.depth)[0])
    pi[v] *= 1.01
    rep = certify_tree_H4(carpet_ws.copy_with(pi=pi))
    assert rep["status"] == "fail"
    assert recheck(carpet_ws.copy_with(pi=pi), "tree_H4", rep["witness"])


def test_h2_fault(carpet_ws):
    pi = carpet_ws.pi.copy()
    v = int(carpet_ws.level_vertices(carpet_ws.depth)[0])
    pi[v] *= 1e30
    bad = carpet_ws.copy_with(pi=pi)
    rep = certify_H2(bad)
    assert rep["status"] == "fail"
    assert recheck(bad, "H2", rep["witness"])


def test_certify_h_combined(carpet_ws):
    rep = certify_H(carpet_ws, "H4")
    assert rep["status"] in ("pass", "reported")
    with pytest.raises((KeyError, ValueError)):
        certify_H(carpet_ws, "H9")


def test_regularity_profile_on_grid_metric(cantor_ws):
    bm = boundary_metric(cantor_ws)
    prof = regularity_profile(bm, 1.0)
    assert prof["min_ratio"] > 0 and prof["max_ratio"] >= prof["min_ratio"]
