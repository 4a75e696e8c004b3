"""Path integrals of ``pi`` and the induced metric.

Edges of the filling are unit intervals along which ``pi`` is interpolated
linearly, so an edge ``a ~ b`` costs ``(pi(a) + pi(b)) / 2``.  The metric is
the shortest-path distance for that cost.  The auxiliary ``ell`` length is
defined on the tree-plus-horizontal subgraph only.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ConfdimError, DomainError
from .metric_spaces import PointCloudSpace, audit_metric, from_matrix

H3_EXHAUSTIVE_MAX = 10_000
H3_SAMPLES = 1000


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------

def edge_list(ws, max_level: int | None = None, tree_only_vertical: bool = False):
    """Undirected edges as ``(a, b, kind)`` arrays; kind 0 horizontal, 1 tree, 2 other vertical."""
    n = ws.n_vertices
    keep = np.ones(n, dtype=bool) if max_level is None else ws.level <= max_level
    hr = np.repeat(np.arange(n), np.diff(ws.h_indptr))
    hc = ws.h_indices
    m = (hr < hc) & keep[hr] & keep[hc]
    dr = np.repeat(np.arange(n), np.diff(ws.d_indptr))
    dc = ws.d_indices
    mv = keep[dr] & keep[dc]
    dr, dc = dr[mv], dc[mv]
    kind_v = np.where(ws.parent[dc] == dr, 1, 2)
    if tree_only_vertical:
        dr, dc, kind_v = dr[kind_v == 1], dc[kind_v == 1], kind_v[kind_v == 1]
    a = np.concatenate([hr[m], dr]).astype(np.int64)
    b = np.concatenate([hc[m], dc]).astype(np.int64)
    kind = np.concatenate([np.zeros(int(m.sum()), dtype=np.int64), kind_v])
    return a, b, kind


def _cost_graph(ws, max_level=None, tree_only_vertical=False):
    a, b, _ = edge_list(ws, max_level, tree_only_vertical)
    w = 0.5 * (ws.pi[a] + ws.pi[b])
    n = ws.n_vertices
    return coo_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))),
                      shape=(n, n)).tocsr()


def distances_from(ws, sources, max_level=None, z_only=False) -> np.ndarray:
    """Rows of the path-integral distance for each source vertex."""
    G = _cost_graph(ws, max_level, z_only)
    return dijkstra(G, directed=False, indices=np.asarray(sources, dtype=np.int64))


def graph_distance(ws, u: int, v: int, z_only: bool = False) -> tuple[float, list]:
    """Distance and one optimal vertex path from ``u`` to ``v``."""
    if u == v:
        return 0.0, [int(u)]
    G = _cost_graph(ws, None, z_only)
    dist, pred = dijkstra(G, directed=False, indices=int(u), return_predecessors=True)
    if not np.isfinite(dist[v]):
        raise ConfdimError(f"vertices {u} and {v} are not connected")
    path = [int(v)]
    while path[-1] != u:
        path.append(int(pred[path[-1]]))
    return float(dist[v]), path[::-1]


def path_integral(ws, path) -> float:
    a = np.asarray(path[:-1])
    b = np.asarray(path[1:])
    return float(np.sum(0.5 * (ws.pi[a] + ws.pi[b])))


# ---------------------------------------------------------------------------
# z and ell
# ---------------------------------------------------------------------------

def ancestry_chain(ws, v: int) -> list[int]:
    chain = [int(v)]
    while ws.parent[chain[-1]] >= 0:
        chain.append(int(ws.parent[chain[-1]]))
    return chain[::-1]


def _adjacent(ws, a: int, b: int) -> bool:
    if ws.parent[a] == b or ws.parent[b] == a:
        return True
    if np.any(ws.h_neighbors(a) == b):
        return True
    return bool(np.any(ws.children(a) == b) or np.any(ws.children(b) == a))


def compute_z(ws, u: int, v: int) -> int:
    """Deepest vertex common to both ancestry chains or on one chain next to the other.

    Ties at equal generation go to the ``u`` chain, then the smallest id.
    """
    cu, cv = ancestry_chain(ws, u), ancestry_chain(ws, v)
    set_v = set(cv)
    best = None  # (generation, from_u, id)
    for chain, other, other_set, from_u in ((cu, cv, set_v, 0), (cv, cu, set(cu), 1)):
        for gen in range(len(chain) - 1, -1, -1):
            a = chain[gen]
            if best is not None and gen < best[0]:
                break
            hit = a in other_set or any(_adjacent(ws, a, b) for b in other)
            if hit:
                key = (gen, -from_u, -a)
                if best is None or key > (best[0], -best[1], -best[2]):
                    best = (gen, from_u, a)
                break
    return int(best[2])


def ell_edge(ws, a: int, b: int, pi_star=None) -> float:
    ps = ws.pi_star if pi_star is None else pi_star
    if ws.level[a] == ws.level[b]:
        if not np.any(ws.h_neighbors(a) == b):
            raise DomainError(f"{a} and {b} are not adjacent")
        return float(min(ps[a], ps[b]))
    lo, hi = (a, b) if ws.level[a] > ws.level[b] else (b, a)
    if ws.parent[lo] != hi:
        raise DomainError(f"edge {a}-{b} is not a tree edge; ell is defined on the tree plus horizontal edges")
    return float(ws.constants.K0 ** 2 * ps[lo])


def ell_length(ws, path, pi_star=None) -> float:
    ps = ws.pi_star if pi_star is None else pi_star
    return float(sum(ell_edge(ws, int(a), int(b), ps) for a, b in zip(path[:-1], path[1:])))


# ---------------------------------------------------------------------------
# boundary metric
# ---------------------------------------------------------------------------

@dataclass
class BoundaryMetric:
    depth: int
    vertices: np.ndarray
    ids: list
    matrix: np.ndarray
    tail_bound: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.vertices.size

    def as_space(self) -> PointCloudSpace:
        return PointCloudSpace(self.ids, self.matrix, f"d_rho(depth={self.depth})")


def boundary_metric(ws, depth: int | None = None) -> BoundaryMetric:
    """Distances between level-``depth`` vertices through the filling truncated at ``depth``."""
    depth = ws.depth if depth is None else int(depth)
    if not 0 <= depth <= ws.depth:
        raise ValueError(f"depth {depth} outside 0..{ws.depth}")
    vs = ws.level_vertices(depth)
    D = distances_from(ws, vs, max_level=depth)[:, vs]
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    rmax = float(ws.rho[ws.parent >= 0].max()) if ws.n_vertices > 1 else 0.0
    tail = rmax ** (depth + 1) / (1.0 - rmax) if rmax < 1.0 else math.inf
    ids = [ws.point_ids[ws.point[v]] for v in vs]
    return BoundaryMetric(depth, vs.astype(np.int64), ids, D, tail, {"max_rho": rmax})


def _fmt(x: float) -> str:
    return repr(float(x))


def export_metric(bm: BoundaryMetric, path=None, fmt: str = "json") -> str:
    """Serialise as the ``{"points", "matrix"}`` ingestion format or as CSV."""
    if fmt == "json":
        doc = {"points": list(bm.ids), "matrix": [[float(x) for x in row] for row in bm.matrix],
               "depth": bm.depth, "tail_bound": bm.tail_bound if math.isfinite(bm.tail_bound) else None}
        text = json.dumps(doc, sort_keys=True) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id"] + [str(i) for i in bm.ids])
        for i, row in zip(bm.ids, bm.matrix):
            w.writerow([str(i)] + [_fmt(x) for x in row])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _coerce_id(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def load_metric(path_or_text, fmt: str | None = None) -> PointCloudSpace:
    """Read an exported matrix back without rescaling."""
    p = Path(path_or_text) if not isinstance(path_or_text, str) or "\n" not in path_or_text else None
    text = p.read_text() if p is not None else path_or_text
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "csv"
    if fmt == "json":
        doc = json.loads(text)
        ids = [tuple(i) if isinstance(i, list) else i for i in doc["points"]]
        return from_matrix(doc["matrix"], ids, "d_rho", normalize_=False)
    rows = list(csv.reader(io.StringIO(text)))
    ids = [_coerce_id(s) for s in rows[0][1:]]
    M = [[float(x) for x in r[1:]] for r in rows[1:]]
    return from_matrix(M, ids, "d_rho", normalize_=False)


def space_to_boundary(space: PointCloudSpace, depth: int = 0) -> BoundaryMetric:
    return BoundaryMetric(depth, np.arange(space.n), list(space.point_ids), np.array(space.dist),
                          math.nan)


def metric_audit(bm: BoundaryMetric):
    return audit_metric(bm.matrix)


# ---------------------------------------------------------------------------
# distance comparisons
# ---------------------------------------------------------------------------

def sample_pairs(n: int, rng, exhaustive_max: int = H3_EXHAUSTIVE_MAX, n_samples: int = H3_SAMPLES):
    """All unordered pairs when there are at most ``exhaustive_max``, else a seeded sample."""
    total = n * (n - 1) // 2
    target = min(max(n_samples, 1), total)
    if total <= exhaustive_max or target == total:
        i, j = np.triu_indices(n, 1)
        return np.stack([i, j], axis=1)
    seen = set()
    out = []
    while len(out) < target:
        a, b = (int(x) for x in rng.integers(0, n, size=2))
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return np.array(sorted(out), dtype=np.int64)


@dataclass
class DistanceBounds:
    pairs: int
    exhaustive: bool
    lower_violations: list
    upper_violations: list
    z_lower_violations: list
    K1: float
    K1_empirical: float
    C_upper: float
    C_empirical: float
    worst_lower_pair: list | None = None

    @property
    def ok(self) -> bool:
        return not (self.lower_violations or self.upper_violations or self.z_lower_violations)

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else ("inf" if x > 0 else "nan")
        return {"pairs": self.pairs, "exhaustive": self.exhaustive, "ok": self.ok,
                "lower_violations": self.lower_violations[:20],
                "upper_violations": self.upper_violations[:20],
                "z_lower_violations": self.z_lower_violations[:20],
                "n_lower_violations": len(self.lower_violations),
                "n_upper_violations": len(self.upper_violations),
                "n_z_lower_violations": len(self.z_lower_violations),
                "K1": num(self.K1), "K1_empirical": num(self.K1_empirical),
                "C_upper": num(self.C_upper), "C_empirical": num(self.C_empirical),
                "worst_lower_pair": self.worst_lower_pair}


def distance_bounds(ws, rng, n_samples: int = H3_SAMPLES,
                    exhaustive_max: int = H3_EXHAUSTIVE_MAX) -> DistanceBounds:
    """Lower bound ``pi(z)/K1`` on the full graph, ``pi(z)/K0^6`` on the tree-plus-horizontal
    subgraph, and the upper bound ``C pi(z)`` on sampled vertex pairs."""
    K0 = ws.constants.K0
    K1 = ws.constants.K1
    with np.errstate(over="ignore"):
        K06 = float(np.power(K0, 6.0))
    rmax = float(ws.rho[ws.parent >= 0].max()) if ws.n_vertices > 1 else 0.0
    C = 2.0 * (K0 + 1.0) / (1.0 - rmax) if rmax < 1.0 else math.inf
    pairs = sample_pairs(ws.n_vertices, rng, exhaustive_max, n_samples)
    srcs = np.unique(pairs[:, 0])
    Dfull = distances_from(ws, srcs)
    Dz = distances_from(ws, srcs, z_only=True)
    row = {int(s): i for i, s in enumerate(srcs)}
    low, up, zlow = [], [], []
    k1_emp, c_emp, worst = 0.0, 0.0, None
    for a, b in pairs:
        a, b = int(a), int(b)
        z = compute_z(ws, a, b)
        pz = float(ws.pi[z])
        d = float(Dfull[row[a], b])
        dz = float(Dz[row[a], b])
        if not d * K1 >= pz:
            low.append([a, b, z, d, pz])
        if not d <= C * pz:
            up.append([a, b, z, d, pz])
        if not dz * K06 >= pz:
            zlow.append([a, b, z, dz, pz])
        ratio = pz / d if d > 0 else math.inf
        if ratio > k1_emp:
            k1_emp, worst = ratio, [a, b, z]
        c_emp = max(c_emp, d / pz)
    return DistanceBounds(int(pairs.shape[0]), ws.n_vertices * (ws.n_vertices - 1) // 2 <= exhaustive_max,
                          low, up, zlow, K1, k1_emp, C, c_emp, worst)


def bridging_check(ws) -> dict:
    """Edge-wise ``ell(e) <= int_e pi`` (horizontal) and ``ell(e) <= K0^3 int_e pi`` (tree)."""
    a, b, kind = edge_list(ws, tree_only_vertical=True)
    ps = ws.pi_star
    integ = 0.5 * (ws.pi[a] + ws.pi[b])
    lo = np.where(ws.level[a] > ws.level[b], a, b)
    ell = np.where(kind == 0, np.minimum(ps[a], ps[b]), ws.constants.K0 ** 2 * ps[lo])
    with np.errstate(over="ignore"):
        factor = np.where(kind == 0, 1.0, float(np.power(ws.constants.K0, 3.0)))
    bad = np.flatnonzero(ell > factor * integ * (1 + 1e-12))
    return {"edges": int(a.size), "ok": bad.size == 0,
            "violations": [[int(a[i]), int(b[i])] for i in bad[:20]]}


def family_ell_check(ws) -> dict:
    """On stored family paths: ``ell(path) >= min(1, s) * max(pi*(v), pi*(parent of first))``
    where ``s`` is the path's sum of consecutive ``rho*`` minima."""
    ps, rs = ws.pi_star, ws.rho_star
    checked, bad = 0, []
    worst = math.inf
    for v, paths in sorted(ws.family_paths.items()):
        for pth in paths:
            if len(pth) < 2:
                continue
            arr = np.asarray(pth)
            ell = float(np.minimum(ps[arr[:-1]], ps[arr[1:]]).sum())
            s = float(np.minimum(rs[arr[:-1]], rs[arr[1:]]).sum())
            need = min(1.0, s) * max(ps[v], ps[ws.parent[arr[0]]])
            checked += 1
            worst = min(worst, ell / need)
            if ell < need * (1 - 1e-12):
                bad.append([int(v), [int(x) for x in pth]])
    return {"paths": checked, "ok": not bad, "violations": bad[:20],
            "worst_ratio": worst if math.isfinite(worst) else None}
