"""Certificates for a computed weight system.

Each ``certify_*`` function returns a section dict with a ``status``
(``pass``, ``fail`` or ``reported``), the achieved constant next to the
theoretical one, and a witness.  :func:`recheck` re-evaluates a single
witness so a failure can be reproduced in isolation.  Sections never raise;
the CLI decides the exit code from the statuses.
"""
from __future__ import annotations

import json
import math

import numpy as np
from scipy.sparse import csr_matrix

from .errors import ConfdimError, SamplingError
from .gauge_density import distortion_samples
from .metric_builder import (BoundaryMetric, boundary_metric, bridging_check, distance_bounds,
                             family_ell_check)
from .metric_spaces import PointCloudSpace, audit_metric

NORM_TOL = 1e-9
RATIO_TOL = 1e-12
SECTIONS = ("H1", "normalization", "tree_H4", "graph_H4", "H2", "H3", "H3prime", "ell")
REPORT_SCHEMA = "confdim.certificate/1"


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


def _status(ok: bool, asserted: bool = True) -> str:
    if ok:
        return "pass"
    return "fail" if asserted else "reported"


def _nonroot(ws) -> np.ndarray:
    return np.flatnonzero(ws.parent >= 0)


# ---------------------------------------------------------------------------
# individual conditions
# ---------------------------------------------------------------------------

def certify_H1(ws) -> dict:
    c = ws.constants
    kids = _nonroot(ws)
    rho = ws.rho[kids]
    lo, hi = c.eta_minus, c.rho_upper
    bad = kids[(rho < lo) | (rho > hi) | ~(rho < 1.0)]
    witness = None
    if bad.size:
        v = int(bad[0])
        witness = {"vertex": v, "rho": float(ws.rho[v])}
    return {"status": _status(bad.size == 0), "violations": int(bad.size), "witness": witness,
            "achieved": {"min_rho": _num(rho.min()) if rho.size else None,
                         "max_rho": _num(rho.max()) if rho.size else None},
            "theoretical": {"eta_minus": lo, "upper": hi}}


def certify_normalization(ws) -> dict:
    """``sum rho^p`` over tree children equals 1 for every vertex with children."""
    p = ws.constants.p
    worst, witness, bad = 0.0, None, 0
    for v in range(ws.n_vertices):
        ch = ws.tree_children(v)
        if ch.size == 0:
            continue
        err = abs(float(np.sum(ws.rho[ch] ** p)) - 1.0)
        if err > NORM_TOL:
            bad += 1
            if witness is None:
                witness = _norm_witness(ws, v, ch)
        worst = max(worst, err)
    return {"status": _status(bad == 0), "violations": bad, "witness": witness,
            "achieved": {"max_error": worst}, "theoretical": {"tolerance": NORM_TOL}}


def _norm_witness(ws, v, ch) -> dict:
    # the child whose rho disagrees most with the stored product pi
    implied = ws.pi[ch] / ws.pi[v]
    dev = np.abs(ws.rho[ch] - implied) / np.maximum(implied, 1e-300)
    culprit = int(ch[int(np.argmax(dev))]) if dev.max() > 1e-12 else None
    return {"parent": int(v), "vertex": culprit}


def _tree_sums(ws, values: np.ndarray) -> list[np.ndarray]:
    """``out[j][v] = sum of values over tree descendants j levels below v``."""
    par = ws.parent
    kids = _nonroot(ws)
    out = [values.copy()]
    for _ in range(ws.depth):
        nxt = np.zeros_like(values)
        np.add.at(nxt, par[kids], out[-1][kids])
        out.append(nxt)
    return out


def certify_tree_H4(ws) -> dict:
    p = ws.constants.p
    pp = ws.pi ** p
    sums = _tree_sums(ws, pp)
    worst, witness, bad = 0.0, None, 0
    for j in range(1, ws.depth + 1):
        vs = np.flatnonzero(ws.level + j <= ws.depth)
        err = np.abs(sums[j][vs] / pp[vs] - 1.0)
        if err.size:
            i = int(np.argmax(err))
            worst = max(worst, float(err[i]))
            nbad = int((err > NORM_TOL).sum())
            if nbad and witness is None:
                witness = {"vertex": int(vs[i]), "j": j}
            bad += nbad
    return {"status": _status(bad == 0), "violations": bad, "witness": witness,
            "achieved": {"max_relative_error": worst}, "theoretical": {"tolerance": NORM_TOL}}


def _down_matrix(ws) -> csr_matrix:
    n = ws.n_vertices
    rows = np.repeat(np.arange(n), np.diff(ws.d_indptr))
    return csr_matrix((np.ones(rows.size), (rows, ws.d_indices)), shape=(n, n))


def certify_graph_H4(ws) -> dict:
    """``K2^-1 pi(v)^p <= sum over vertical descendants j levels down <= K2 pi(v)^p``."""
    c = ws.constants
    p = c.p
    pp = ws.pi ** p
    A = _down_matrix(ws)
    R = csr_matrix(np.eye(ws.n_vertices))
    lo_worst, hi_worst, witness, bad = math.inf, 0.0, None, 0
    for j in range(1, ws.depth + 1):
        R = R @ A
        R.data[:] = 1.0
        s = R @ pp
        vs = np.flatnonzero(ws.level + j <= ws.depth)
        if vs.size == 0:
            break
        ratio = s[vs] / pp[vs]
        lo_worst = min(lo_worst, float(ratio.min()))
        hi_worst = max(hi_worst, float(ratio.max()))
        viol = (ratio * c.K2 < 1.0) | (ratio > c.K2)
        if viol.any() and witness is None:
            witness = {"vertex": int(vs[np.flatnonzero(viol)[0]]), "j": j}
        bad += int(viol.sum())
    return {"status": _status(bad == 0, c.mode == "theory"), "violations": bad, "witness": witness,
            "achieved": {"min_ratio": _num(lo_worst), "max_ratio": _num(hi_worst)},
            "theoretical": {"K2": _num(c.K2)}}


def certify_H2(ws) -> dict:
    from .metric_builder import edge_list
    K0 = ws.constants.K0
    a, b, kind = edge_list(ws)
    r = ws.pi[a] / ws.pi[b]
    r = np.maximum(r, 1.0 / r)
    bound = np.where(kind == 0, math.sqrt(K0), K0) * (1 + RATIO_TOL)
    bad = np.flatnonzero(r > bound)
    witness = {"edge": [int(a[bad[0]]), int(b[bad[0]])]} if bad.size else None
    hmask, vmask = kind == 0, kind > 0
    return {"status": _status(bad.size == 0), "violations": int(bad.size), "witness": witness,
            "achieved": {"max_horizontal_ratio": _num(r[hmask].max()) if hmask.any() else None,
                         "max_vertical_ratio": _num(r[vmask].max()) if vmask.any() else None},
            "theoretical": {"K0": _num(K0), "horizontal": _num(math.sqrt(K0))}}


def certify_H3(ws, seed: int = 42, samples: int = 1000) -> dict:
    rng = np.random.default_rng(seed)
    db = distance_bounds(ws, rng, samples)
    witness = None
    if db.lower_violations:
        witness = {"pair": db.lower_violations[0][:2], "z": db.lower_violations[0][2]}
    elif db.z_lower_violations:
        witness = {"pair": db.z_lower_violations[0][:2], "z": db.z_lower_violations[0][2]}
    elif db.upper_violations:
        witness = {"pair": db.upper_violations[0][:2], "z": db.upper_violations[0][2]}
    d = db.to_dict()
    return {"status": _status(db.ok), "violations": len(db.lower_violations) + len(db.upper_violations)
            + len(db.z_lower_violations), "witness": witness, "pairs": db.pairs,
            "exhaustive": db.exhaustive, "seed": seed,
            "achieved": {"K1": d["K1_empirical"], "C": d["C_empirical"]},
            "theoretical": {"K1": d["K1"], "C": d["C_upper"]}, "detail": d}


def certify_H3prime(ws) -> dict:
    """Consecutive ``rho*`` minima along stored family paths, against 1 and
    against the admissibility level actually used for that family."""
    rs = ws.rho_star
    scale = {r["vertex"]: r.get("scale", 1.0) for r in ws.sigma_report}
    worst_abs, worst_rel, witness, paths = math.inf, math.inf, None, 0
    for v, pths in sorted(ws.family_paths.items()):
        for pth in pths:
            if len(pth) < 2:
                continue
            a = np.asarray(pth)
            s = float(np.minimum(rs[a[:-1]], rs[a[1:]]).sum())
            paths += 1
            rel = s / scale.get(v, 1.0)
            if rel < worst_rel:
                worst_rel = rel
                if rel < 1.0 - NORM_TOL:
                    witness = {"base": int(v), "path": [int(x) for x in pth]}
            worst_abs = min(worst_abs, s)
    ok_rel = worst_rel >= 1.0 - NORM_TOL
    ok_abs = worst_abs >= 1.0 - NORM_TOL
    status = "pass" if ok_abs else ("reported" if ok_rel else "fail")
    return {"status": status, "paths": paths, "witness": witness,
            "achieved": {"min_sum": _num(worst_abs) if paths else None,
                         "min_sum_over_level": _num(worst_rel) if paths else None},
            "theoretical": {"min_sum": 1.0}}


def certify_ell(ws) -> dict:
    br = bridging_check(ws)
    fam = family_ell_check(ws)
    asserted = ws.constants.mode == "theory"
    status = "pass" if br["ok"] and fam["ok"] else ("fail" if not br["ok"] or asserted else "reported")
    witness = None
    if br["violations"]:
        witness = {"edge": br["violations"][0]}
    elif fam["violations"]:
        witness = {"base": fam["violations"][0][0], "path": fam["violations"][0][1]}
    return {"status": status, "witness": witness, "bridging": br, "family_paths": fam}


def certify_H(ws, which: str, seed: int = 42, samples: int = 1000) -> dict:
    fn = {"H1": certify_H1, "normalization": certify_normalization, "tree_H4": certify_tree_H4,
          "graph_H4": certify_graph_H4, "H2": certify_H2, "H3prime": certify_H3prime,
          "ell": certify_ell}
    if which == "H3":
        return certify_H3(ws, seed, samples)
    if which == "H4":
        t, g = certify_tree_H4(ws), certify_graph_H4(ws)
        worst = "fail" if "fail" in (t["status"], g["status"]) else (
            "reported" if "reported" in (t["status"], g["status"]) else "pass")
        return {"status": worst, "tree": t, "graph": g}
    if which not in fn:
        raise ValueError(f"unknown certificate {which!r}")
    return fn[which](ws)


def recheck(ws, which: str, witness: dict) -> bool:
    """Re-evaluate one witness; ``True`` means the condition still fails there."""
    c = ws.constants
    p = c.p
    if which == "H1":
        r = ws.rho[witness["vertex"]]
        return not (c.eta_minus <= r <= c.rho_upper and r < 1.0)
    if which == "normalization":
        ch = ws.tree_children(witness["parent"])
        return abs(float(np.sum(ws.rho[ch] ** p)) - 1.0) > NORM_TOL
    if which == "tree_H4":
        v, j = witness["vertex"], witness["j"]
        cur = np.array([v])
        for _ in range(j):
            cur = np.concatenate([ws.tree_children(u) for u in cur])
        return abs(float(np.sum(ws.pi[cur] ** p)) / ws.pi[v] ** p - 1.0) > NORM_TOL
    if which == "H2":
        a, b = witness["edge"]
        r = max(ws.pi[a] / ws.pi[b], ws.pi[b] / ws.pi[a])
        bound = math.sqrt(c.K0) if ws.level[a] == ws.level[b] else c.K0
        return r > bound * (1 + RATIO_TOL)
    raise ValueError(f"no isolated recheck for {which!r}")


# ---------------------------------------------------------------------------
# regularity and distortion
# ---------------------------------------------------------------------------

def regularity_profile(bm: BoundaryMetric, p: float, scale_grid=None, n_scales: int = 12) -> dict:
    """Counting-measure ball ratios ``N(y, r) / (N (r / diam)^p)`` over a scale window."""
    D = bm.matrix
    n = D.shape[0]
    diam = float(D.max()) if n > 1 else 0.0
    if scale_grid is None:
        if n < 2 or diam <= 0:
            raise ConfdimError("scale window empty: need two distinct points")
        off = D[~np.eye(n, dtype=bool)]
        rmin = float(off.min())
        scale_grid = np.geomspace(rmin, diam, n_scales)
    radii = np.asarray(scale_grid, dtype=np.float64)
    radii = radii[(radii > 0) & (radii <= diam * (1 + 1e-12))]
    if radii.size == 0:
        raise ConfdimError("scale window empty")
    rows = []
    lo, hi = math.inf, 0.0
    for r in radii:
        counts = (D <= r * (1 + 1e-12)).sum(axis=1)
        ratio = counts / (n * (r / diam) ** p)
        rows.append({"r": float(r), "min": float(ratio.min()), "max": float(ratio.max())})
        lo, hi = min(lo, float(ratio.min())), max(hi, float(ratio.max()))
    return {"p": p, "points": n, "diameter": diam, "scales": rows, "min_ratio": lo,
            "max_ratio": hi, "spread": hi / lo if lo > 0 else math.inf}


def distortion_profile(d: PointCloudSpace, d_rho: PointCloudSpace, seed: int = 42,
                       n_triples: int = 200000, t_range=(1e-3, 1e3)) -> dict:
    """Empirical distortion envelope between two metrics on common ids."""
    if d.point_ids != d_rho.point_ids:
        idx = [d.point_ids.index(i) for i in d_rho.point_ids]
        d = PointCloudSpace(d_rho.point_ids, d.dist[np.ix_(idx, idx)], d.label)
    rng = np.random.default_rng(seed)
    try:
        t, eta = distortion_samples(d, d_rho, rng, n_triples)
    except SamplingError as exc:
        return {"bounded": False, "error": str(exc)}
    sel = (t >= t_range[0]) & (t <= t_range[1])
    finite = bool(np.all(np.isfinite(eta[sel])))
    pick = np.unique(np.linspace(0, t.size - 1, min(t.size, 50)).astype(int))
    return {"bounded": finite, "samples": int(t.size), "t_min": float(t.min()), "t_max": float(t.max()),
            "eta_max_in_range": _num(eta[sel].max()) if sel.any() else None,
            "envelope": [[float(t[i]), _num(eta[i])] for i in pick], "seed": seed}


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

def certify_all(ws, seed: int = 42, samples: int = 1000, sections=SECTIONS,
                space: PointCloudSpace | None = None, depth: int | None = None) -> dict:
    report = {"schema": REPORT_SCHEMA, "seed": seed, "constants": ws.constants.to_dict(),
              "sections": {}}
    for name in sections:
        report["sections"][name] = certify_H(ws, name, seed, samples)
    bm = boundary_metric(ws, depth)
    audit = audit_metric(bm.matrix)
    report["metric"] = {"points": bm.n, "depth": bm.depth, "symmetric": audit.symmetric,
                        "zero_diagonal": audit.zero_diagonal, "positive": audit.positive,
                        "triangle_worst": audit.triangle_worst, "exhaustive": audit.exhaustive,
                        "status": _status(audit.ok)}
    if bm.n >= 2:
        report["regularity"] = regularity_profile(bm, ws.constants.p)
        if space is not None:
            report["distortion"] = distortion_profile(space, bm.as_space(), seed)
    statuses = [s.get("status") for s in report["sections"].values()] + [report["metric"]["status"]]
    report["ok"] = "fail" not in statuses
    return report


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return _num(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x
