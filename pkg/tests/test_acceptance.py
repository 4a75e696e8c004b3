"""Acceptance suite: one test per criterion, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""
import json
import time

import numpy as np
import pytest

from confdim.cli import main
from confdim.gauge_density import gauge_report, snowflake_gauge
from confdim.metric_builder import boundary_metric, export_metric, load_metric
from confdim.metric_spaces import (audit_metric, estimate_constants, generate_cantor,
                                   generate_carpet, generate_grid, snowflake)
from confdim.modulus import (ModulusCache, brute_force_modulus, decides_decay,
                             estimate_dimension_on_graph, solve_modulus)
from confdim.nets_filling import attach_tree, build_graph, build_nets, check_tree, resample_graph
from confdim.verification import certify_all, certify_normalization, recheck
from confdim.weight_pipeline import run_pipeline

from _families import chain, chain_parts, disjoint_union, filling_families
from _report import criterion

PS = (1.0, 1.5, 2.0, 3.0)


def test_c1_solver_matches_oracle():
    with criterion(1, "solver vs brute force") as note:
        t0 = time.perf_counter()
        fams = filling_families(2024, 50)
        worst = 0.0
        for fam in fams:
            for p in PS:
                a = solve_modulus(fam, p).value
                b = brute_force_modulus(fam, p).value
                worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
        elapsed = time.perf_counter() - t0
        note["detail"] = f"{len(fams)} families x {len(PS)} exponents, worst rel err {worst:.2e}"
        assert len(fams) >= 50
        assert worst <= 1e-6
        assert elapsed < 120


def test_c2_closed_forms():
    with criterion(2, "closed forms") as note:
        worst_chain, worst_union = 0.0, 0.0
        for m in range(1, 13):
            for p in PS:
                v = solve_modulus(chain(m), p).value
                worst_chain = max(worst_chain, abs(v - m ** (1 - p)))
        for sizes in ([2, 3], [1, 4, 7], [5, 5, 12]):
            fam = disjoint_union(*(chain_parts(m) for m in sizes))
            for p in PS:
                want = sum(solve_modulus(chain(m), p).value for m in sizes)
                got = solve_modulus(fam, p).value
                worst_union = max(worst_union, abs(got - want) / want)
        note["detail"] = f"chain abs err {worst_chain:.1e}, union rel err {worst_union:.1e}"
        assert worst_chain <= 1e-9 and worst_union <= 1e-8


def test_c3_dimension_brackets():
    with criterion(3, "dimension brackets") as note:
        t0 = time.perf_counter()
        g = build_graph(build_nets(generate_cantor(8), 3.0, 8), 7.0)
        cantor = estimate_dimension_on_graph(g, [1, 2, 3, 4])
        t_cantor = time.perf_counter() - t0
        t0 = time.perf_counter()
        g = build_graph(build_nets(generate_grid(1025), 2.0, 8), 7.0)
        grid = estimate_dimension_on_graph(g, [1, 2, 3, 4])
        t_grid = time.perf_counter() - t0
        note["detail"] = f"cantor {cantor.describe()}, grid {grid.describe()}"
        assert cantor.status == "below_one" and t_cantor < 600
        assert t_grid < 600
        assert grid.status == "bracket"
        assert grid.p_lo <= 1.0 <= grid.p_hi and grid.p_hi - grid.p_lo <= 0.5


def test_c4_snowflake_keeps_classification():
    with criterion(4, "gauge invariance of decay") as note:
        base = generate_grid(1025)
        ks = [1, 2, 3, 4]
        out = {}
        for name, space in (("grid", base), ("snowflake", snowflake(base, 0.5))):
            g = build_graph(build_nets(space, 2.0, 8), 7.0)
            cache = ModulusCache()
            out[name] = {p: decides_decay(g, p, ks, cache, 0.1)[0] for p in (1.25, 1.5, 2.0)}
            assert cache.monotonicity_violations == []
        note["detail"] = f"grid {out['grid']}, snowflake {out['snowflake']}"
        assert out["grid"] == out["snowflake"]


def _certified(space, alpha, tau, L, n0, p):
    g = attach_tree(resample_graph(build_nets(space, alpha, L), n0, tau))
    ws = run_pipeline(g, p)
    return ws, certify_all(ws)


def test_c5_pipeline_certificates():
    with criterion(5, "pipeline certificates") as note:
        t0 = time.perf_counter()
        parts = []
        for label, space, args in (("cantor", generate_cantor(8), (3.0, 7.0, 8, 4, 1.0)),
                                   ("carpet", generate_carpet(2), (2.0, 7.0, 4, 2, 2.0))):
            ws, rep = _certified(space, *args)
            sec = rep["sections"]
            for name in ("H1", "normalization", "tree_H4", "H2", "H3"):
                assert sec[name]["status"] == "pass", (label, name, sec[name])
            assert sec["graph_H4"]["violations"] == 0
            assert sec["normalization"]["achieved"]["max_error"] <= 1e-9
            assert sec["H3"]["pairs"] >= 1000 and sec["H3"]["violations"] == 0
            parts.append(f"{label}: {sec['H3']['pairs']} pairs")
        note["detail"] = ", ".join(parts)
        assert time.perf_counter() - t0 < 900


def test_c6_metric_axioms(tmp_path, cantor_ws, carpet_ws):
    with criterion(6, "metric axioms of d_rho") as note:
        sizes = []
        for ws in (cantor_ws, carpet_ws):
            bm = boundary_metric(ws)
            path = tmp_path / "d.json"
            export_metric(bm, path, "json")
            D = load_metric(path).dist
            assert D.shape[0] <= 2000
            assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0.0)
            audit = audit_metric(D)
            assert audit.exhaustive and audit.positive and audit.triangle_worst <= 0.0
            sizes.append(D.shape[0])
        note["detail"] = f"exhaustive triangle check on {sizes} points"


def test_c7_gauge_density_audit():
    with criterion(7, "gauge density audit") as note:
        s = generate_carpet(2)
        K_d = estimate_constants(s).K_d
        g = build_graph(build_nets(s, 2.0, 3), 7.0)
        rep = gauge_report(snowflake_gauge(s, 0.5, analytic=True), g, [1, 2, 3], 2.0, K_d)
        rows = rep["pairs"]
        checked = sum(r["checked"] for r in rows)
        nonvac = [r for r in rows if r["checked"] > 0]
        note["detail"] = (f"{len(nonvac)} non-vacuous pairs, {checked} comparisons, "
                          f"{sum(not r['feasible'] for r in rows)} infeasible families")
        assert nonvac
        assert all(r["first_failures"] == 0 and r["ratio_failures"] == 0 for r in rows)
        assert all(r["feasible"] for r in rows)


def _cli_run(out):
    steps = [
        ["space", "gen", "--kind", "carpet", "--depth", "2"],
        ["fill", "--alpha", "2", "--tau", "7", "--L", "4", "--n0", "2"],
        ["modulus", "--p", "2", "--k", "1..2"],
        ["pipeline", "--p", "2", "--n0", "2", "--seed", "11"],
        ["build-metric", "--format", "csv"],
        ["build-metric", "--format", "json"],
        ["certify", "--all", "--seed", "11"],
        ["gauge-check", "--L", "3", "--k", "1..2"],
    ]
    for argv in steps:
        assert main(["--out", str(out), *argv]) == 0, argv


def test_c8_determinism(tmp_path):
    with criterion(8, "determinism") as note:
        a, b = tmp_path / "a", tmp_path / "b"
        _cli_run(a)
        _cli_run(b)
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        same = [n for n in names if (a / n).read_bytes() == (b / n).read_bytes()]
        note["detail"] = f"{len(same)}/{len(names)} artifacts byte-identical"
        assert len(same) == len(names)


def test_c9_fault_injection(carpet_ws, carpet_tree):
    with criterion(9, "fault injection") as note:
        ws = carpet_ws
        w = int(ws.level_vertices(ws.depth)[9])
        rho = ws.rho.copy()
        rho[w] *= 1.1
        bad = ws.copy_with(rho=rho)
        rep = certify_normalization(bad)
        assert rep["status"] == "fail"
        assert rep["witness"] == {"parent": int(ws.parent[w]), "vertex": w}
        assert recheck(bad, "normalization", rep["witness"])
        par = carpet_tree.tree_parent.copy()
        victim = int(carpet_tree.level_vertices(1)[2])
        par[victim] = -1
        tree = check_tree(carpet_tree.with_tree_parent(par))
        assert not tree["ok"] and victim in tree["orphans"]
        note["detail"] = f"rho fault at {w} caught, orphan {victim} caught"
