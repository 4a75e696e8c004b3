"""Nested separated nets, filling graphs, the parent tree and vertex combinatorics.

Vertices are integers.  Vertex ``v`` sits at level ``graph.level[v]`` over the
space point with index ``graph.point[v]``; vertices are ordered by level and
then by point index, so ids are deterministic.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import InsufficientDepthError, ParameterError
from .metric_spaces import PointCloudSpace

logger = logging.getLogger(__name__)

REL_TOL = 1e-12


def _lt(d, R):
    """Strict ``d < R`` with a relative guard against round-off."""
    return d < R * (1.0 - REL_TOL)


# ---------------------------------------------------------------------------
# parameter bounds
# ---------------------------------------------------------------------------

def alpha_bound(K_d: float | None) -> float:
    return max(2.0, K_d ** 3) if K_d is not None else 2.0


def tau_bound(alpha: float, K_d: float | None) -> float:
    b = max(6.0, 2.0 * (1.0 + 1.0 / alpha))
    if K_d is not None:
        b = max(b, 2.0 * K_d ** 3 / (K_d ** 2 - 4.0))
    return b


def check_alpha(alpha: float, K_d: float | None = None, mode: str = "practical") -> None:
    if mode == "theory":
        bound = alpha_bound(K_d)
        if not alpha > bound:
            raise ParameterError(f"alpha={alpha:g} violates alpha > max(2, K_d^3) = {bound:g}")
    elif not alpha > 1.0:
        raise ParameterError(f"alpha={alpha:g} violates alpha > 1")


def check_tau(tau: float, alpha: float, K_d: float | None = None, mode: str = "practical") -> None:
    if mode == "theory":
        bound = tau_bound(alpha, K_d)
        if not tau > bound:
            raise ParameterError(
                f"tau={tau:g} violates tau > max(6, 2(1+1/alpha), 2K_d^3/(K_d^2-4)) = {bound:g}")
    else:
        bound = max(6.0, 2.0 * (1.0 + 1.0 / alpha))
        if not tau > bound:
            raise ParameterError(f"tau={tau:g} violates tau > {bound:g} (tau > 6 and tau > 2(1+1/alpha))")


def n0_condition(alpha: float, tau: float, n0: int) -> tuple[bool, float, float]:
    """The resampling condition ``6 + 4a + 8 tau a < tau < alpha^n0 / 4`` with ``a = alpha^-n0``."""
    a = alpha ** (-n0)
    lower = 6.0 + 4.0 * a + 8.0 * tau * a
    upper = alpha ** n0 / 4.0
    return (lower < tau < upper), lower, upper


# ---------------------------------------------------------------------------
# nets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NetHierarchy:
    space: PointCloudSpace
    alpha: float
    masks: np.ndarray  # (L+1, n) bool, masks[n] marks A_n

    @property
    def L(self) -> int:
        return self.masks.shape[0] - 1

    @cached_property
    def levels(self) -> list[np.ndarray]:
        return [np.flatnonzero(m) for m in self.masks]

    def radius(self, n: int) -> float:
        return self.alpha ** (-n)

    def saturated_levels(self) -> list[int]:
        """Levels below the space resolution (the net is the whole point set)."""
        gap = self.space.min_gap
        return [n for n in range(self.L + 1) if self.radius(n) < gap]


def build_nets(space: PointCloudSpace, alpha: float, L: int, K_d: float | None = None,
               mode: str = "practical") -> NetHierarchy:
    check_alpha(alpha, K_d, mode)
    if L < 1:
        raise ParameterError("L must be >= 1")
    n = space.n
    masks = np.zeros((L + 1, n), dtype=np.bool_)
    masks[0, 0] = True
    for lev in range(1, L + 1):
        thr = alpha ** (-lev) * (1.0 - REL_TOL)
        masks[lev] = _kernels.greedy_extend(space.dist, masks[lev - 1].copy(), thr)
    nets = NetHierarchy(space, float(alpha), masks)
    sat = nets.saturated_levels()
    if sat:
        logger.info("levels %s lie below the space resolution", sat)
    return nets


def audit_nets(nets: NetHierarchy) -> dict:
    """Exhaustive nesting / separation / maximality check."""
    D = nets.space.dist
    out = {"nested": True, "separated": True, "maximal": True, "root_singleton": bool(nets.masks[0].sum() == 1)}
    for lev in range(nets.L + 1):
        r = nets.radius(lev)
        idx = nets.levels[lev]
        if lev and np.any(nets.masks[lev - 1] & ~nets.masks[lev]):
            out["nested"] = False
        sub = D[np.ix_(idx, idx)]
        if idx.size > 1 and sub[~np.eye(idx.size, dtype=bool)].min() < r * (1.0 - REL_TOL):
            out["separated"] = False
        if D[idx].min(axis=0).max() >= r:
            out["maximal"] = False
    out["ok"] = all(out.values())
    return out


# ---------------------------------------------------------------------------
# filling graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FillingGraph:
    """Leveled filling graph ``G`` (``step=1``) or its resampling ``G[n0]``.

    ``h_indptr/h_indices`` is the CSR horizontal adjacency (sorted), ``down``
    the CSR of vertical edges to the next level.  ``tree_parent`` is ``None``
    until :func:`attach_tree` is called.
    """

    nets: NetHierarchy
    step: int
    tau: float
    point: np.ndarray
    level: np.ndarray
    level_start: np.ndarray
    h_indptr: np.ndarray
    h_indices: np.ndarray
    d_indptr: np.ndarray
    d_indices: np.ndarray
    tree_parent: np.ndarray | None = None

    @property
    def space(self) -> PointCloudSpace:
        return self.nets.space

    @property
    def alpha(self) -> float:
        return self.nets.alpha

    @property
    def n_vertices(self) -> int:
        return self.point.shape[0]

    @property
    def depth(self) -> int:
        return self.level_start.shape[0] - 2

    @property
    def root(self) -> int:
        return 0

    def radius(self, k) -> float:
        return self.alpha ** (-self.step * np.asarray(k, dtype=np.float64))

    def vertex_radius(self, v: int) -> float:
        return float(self.radius(self.level[v]))

    def level_vertices(self, k: int) -> np.ndarray:
        return np.arange(self.level_start[k], self.level_start[k + 1])

    @cached_property
    def _lookup(self) -> np.ndarray:
        tab = np.full((self.depth + 1, self.space.n), -1, dtype=np.int64)
        tab[self.level, self.point] = np.arange(self.n_vertices)
        return tab

    def vertex(self, point_index: int, k: int) -> int:
        v = int(self._lookup[k, point_index])
        if v < 0:
            raise KeyError((point_index, k))
        return v

    def label(self, v: int) -> tuple:
        return (self.space.point_ids[self.point[v]], int(self.level[v]))

    def h_neighbors(self, v: int) -> np.ndarray:
        return self.h_indices[self.h_indptr[v]:self.h_indptr[v + 1]]

    def children(self, v: int) -> np.ndarray:
        return self.d_indices[self.d_indptr[v]:self.d_indptr[v + 1]]

    @cached_property
    def _up(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.n_vertices), np.diff(self.d_indptr))
        order = np.lexsort((rows, self.d_indices))
        cols = self.d_indices[order]
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        return np.cumsum(indptr), rows[order]

    def parents(self, v: int) -> np.ndarray:
        indptr, idx = self._up
        return idx[indptr[v]:indptr[v + 1]]

    @cached_property
    def h_degree(self) -> np.ndarray:
        return np.diff(self.h_indptr)

    @property
    def N2(self) -> int:
        return int(self.h_degree.max()) + 1 if self.n_vertices else 1

    def tree_children(self, v: int) -> np.ndarray:
        return self._tree_csr[1][self._tree_csr[0][v]:self._tree_csr[0][v + 1]]

    @cached_property
    def _tree_csr(self):
        if self.tree_parent is None:
            raise ValueError("graph has no tree attached")
        par = self.tree_parent
        nonroot = np.flatnonzero(par >= 0)
        order = nonroot[np.lexsort((nonroot, par[nonroot]))]
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, par[order] + 1, 1)
        return np.cumsum(indptr), order

    def is_tree_edge(self, a: int, b: int) -> bool:
        par = self.tree_parent
        return par is not None and (par[b] == a or par[a] == b)

    def with_tree_parent(self, parent: np.ndarray) -> "FillingGraph":
        return replace(self, tree_parent=np.asarray(parent, dtype=np.int64))


def _levels_for(nets: NetHierarchy, step: int) -> list[np.ndarray]:
    depth = nets.L // step
    return [nets.levels[step * k] for k in range(depth + 1)]


def _csr_from_pairs(n: int, rows: np.ndarray, cols: np.ndarray):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64)


def resample_graph(nets: NetHierarchy, n0: int, tau: float, K_d: float | None = None,
                   mode: str = "practical", min_depth: int = 1) -> FillingGraph:
    """Filling graph over levels ``0, n0, 2 n0, ...`` with ``alpha**n0`` in place of ``alpha``."""
    if n0 < 1:
        raise ParameterError("n0 must be >= 1")
    check_tau(tau, nets.alpha, K_d, mode)
    if mode == "theory" and n0 > 1:
        ok, lo, hi = n0_condition(nets.alpha, tau, n0)
        if not ok:
            raise ParameterError(
                f"n0={n0} violates 6+4a+8*tau*a < tau < alpha^n0/4 with a=alpha^-n0 "
                f"(need {lo:.6g} < {tau:g} < {hi:.6g})")
    if nets.L // n0 < min_depth:
        raise InsufficientDepthError(f"L={nets.L} gives fewer than {min_depth} levels at n0={n0}")
    D = nets.space.dist
    levels = _levels_for(nets, n0)
    sizes = np.array([lv.size for lv in levels])
    level_start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    point = np.concatenate(levels).astype(np.int64)
    level = np.repeat(np.arange(len(levels)), sizes).astype(np.int64)
    a = nets.alpha ** n0
    hr, hc, dr, dc = [], [], [], []
    for k, idx in enumerate(levels):
        r = a ** (-k)
        sub = D[np.ix_(idx, idx)]
        i, j = np.nonzero(_lt(sub, 2.0 * tau * r))
        keep = i != j
        hr.append(i[keep] + level_start[k])
        hc.append(j[keep] + level_start[k])
        if k + 1 < len(levels):
            nxt = levels[k + 1]
            i, j = np.nonzero(_lt(D[np.ix_(idx, nxt)], r + r / a))
            dr.append(i + level_start[k])
            dc.append(j + level_start[k + 1])
    n = point.size
    cat = lambda xs: np.concatenate(xs).astype(np.int64) if xs else np.zeros(0, np.int64)  # noqa: E731
    h_indptr, h_indices = _csr_from_pairs(n, cat(hr), cat(hc))
    d_indptr, d_indices = _csr_from_pairs(n, cat(dr), cat(dc))
    return FillingGraph(nets, int(n0), float(tau), point, level, level_start,
                        h_indptr, h_indices, d_indptr, d_indices)


def build_graph(nets: NetHierarchy, tau: float, K_d: float | None = None,
                mode: str = "practical") -> FillingGraph:
    return resample_graph(nets, 1, tau, K_d, mode)


def attach_tree(graph: FillingGraph) -> FillingGraph:
    """Parent of ``(x, k)`` is the nearest level ``k-1`` net point (smallest index on ties)."""
    D = graph.space.dist
    parent = np.full(graph.n_vertices, -1, dtype=np.int64)
    for k in range(1, graph.depth + 1):
        prev = graph.level_vertices(k - 1)
        cur = graph.level_vertices(k)
        sub = D[np.ix_(graph.point[cur], graph.point[prev])]
        parent[cur] = prev[np.argmin(sub, axis=1)]  # argmin returns the first minimum
    return graph.with_tree_parent(parent)


# ---------------------------------------------------------------------------
# tree checks
# ---------------------------------------------------------------------------

def check_tree(graph: FillingGraph) -> dict:
    """Parent edges must form a spanning tree of vertical graph edges."""
    par = graph.tree_parent
    n = graph.n_vertices
    nonroot = np.flatnonzero(par >= 0)
    missing = [int(v) for v in range(1, n) if par[v] < 0]
    bad_edges = [int(v) for v in nonroot
                 if graph.level[par[v]] != graph.level[v] - 1 or v not in graph.children(par[v])]
    A = coo_matrix((np.ones(nonroot.size), (nonroot, par[nonroot])), shape=(n, n))
    ncomp, labels = connected_components(A, directed=False)
    witness = None
    if ncomp > 1:
        witness = int(np.flatnonzero(labels != labels[graph.root])[0])
    ok = ncomp == 1 and nonroot.size == n - 1 and not bad_edges and par[graph.root] < 0
    return {"ok": bool(ok), "components": int(ncomp), "parent_edges": int(nonroot.size),
            "vertices": int(n), "orphans": missing, "non_vertical_parents": bad_edges,
            "witness": witness}


def ancestry(graph: FillingGraph, v: int) -> list[int]:
    """``[g(v)_0, ..., g(v)_{n_v}]``: root first, ``v`` last."""
    chain = [int(v)]
    par = graph.tree_parent
    while par[chain[-1]] >= 0:
        chain.append(int(par[chain[-1]]))
    return chain[::-1]


def check_cross_parent_adjacency(graph: FillingGraph) -> dict:
    """Every non-tree vertical edge ``v ~ w`` needs the parent of ``w`` horizontally adjacent to ``v``."""
    par = graph.tree_parent
    checked, violations = 0, []
    for v in range(graph.n_vertices):
        hv = graph.h_neighbors(v)
        for w in graph.children(v):
            if par[w] == v:
                continue
            checked += 1
            pw = par[w]
            if not np.any(hv == pw):
                violations.append((int(v), int(w)))
    return {"checked": checked, "violations": violations, "ok": not violations}


# ---------------------------------------------------------------------------
# combinatorics
# ---------------------------------------------------------------------------

@dataclass
class VertexCombinatorics:
    v: int
    ancestry: list
    SI: np.ndarray
    S: np.ndarray
    T: np.ndarray
    D: dict = field(default_factory=dict)
    DG: dict = field(default_factory=dict)
    cross_parent_violations: list = field(default_factory=list)

    @property
    def w_v(self):
        return self.D.get("w_v")


class Combinatorics:
    """Cached per-vertex sibling and descendant sets of a graph with a tree."""

    def __init__(self, graph: FillingGraph):
        if graph.tree_parent is None:
            graph = attach_tree(graph)
        self.graph = graph
        self._S: dict[int, np.ndarray] = {}
        self._T: dict[int, np.ndarray] = {}

    def SI(self, v: int) -> np.ndarray:
        g = self.graph
        return np.union1d([v], g.h_neighbors(v)).astype(np.int64)

    def S(self, v: int) -> np.ndarray:
        s = self._S.get(v)
        if s is None:
            g = self.graph
            nb = g.h_neighbors(v)
            parts = [np.array([v]), nb] + [g.h_neighbors(u) for u in nb]
            s = np.unique(np.concatenate(parts)).astype(np.int64)
            self._S[v] = s
        return s

    def T(self, v: int) -> np.ndarray:
        """Level ``n_v + 1`` vertices whose ball (as a point set) lies in ``6 B_v``."""
        t = self._T.get(v)
        if t is None:
            g = self.graph
            k = int(g.level[v])
            if k >= g.depth:
                t = np.zeros(0, dtype=np.int64)
            else:
                D = g.space.dist
                r, rc = g.radius(k), g.radius(k + 1)
                cand = g.level_vertices(k + 1)
                x = g.point[v]
                cand = cand[D[x, g.point[cand]] < 6.0 * r]
                inball = _lt(D[g.point[cand]], rc)  # (c, n)
                far = np.where(inball, D[x][None, :], -np.inf).max(axis=1)
                t = cand[_lt(far, 6.0 * r)].astype(np.int64)
            self._T[v] = t
        return t

    def tree_children(self, v: int) -> np.ndarray:
        return self.graph.tree_children(v)

    def w_v(self, v: int) -> int:
        """Direct descendant: same point, next level (``-1`` at the deepest level)."""
        g = self.graph
        if g.level[v] >= g.depth:
            return -1
        return g.vertex(int(g.point[v]), int(g.level[v]) + 1)

    def D_j(self, v: int, j: int) -> np.ndarray:
        cur = np.array([v], dtype=np.int64)
        for _ in range(j):
            if cur.size == 0:
                break
            cur = np.concatenate([self.graph.tree_children(u) for u in cur])
        return np.sort(cur)

    def DG_j(self, v: int, j: int) -> np.ndarray:
        cur = np.array([v], dtype=np.int64)
        for _ in range(j):
            if cur.size == 0:
                break
            cur = np.unique(np.concatenate([self.graph.children(u) for u in cur]))
        return cur.astype(np.int64)

    def ancestry(self, v: int) -> list[int]:
        return ancestry(self.graph, v)

    @cached_property
    def M(self) -> int:
        g = self.graph
        vs = range(g.level_start[g.depth]) if g.depth > 0 else []
        return max((self.T(v).size for v in vs), default=0)

    def vertex(self, v: int, max_j: int | None = None) -> VertexCombinatorics:
        g = self.graph
        depth_left = g.depth - int(g.level[v])
        max_j = depth_left if max_j is None else min(max_j, depth_left)
        D = {j: self.D_j(v, j) for j in range(max_j + 1)}
        DG = {j: self.DG_j(v, j) for j in range(max_j + 1)}
        D["w_v"] = self.w_v(v)
        viol = []
        par = g.tree_parent
        for w in g.children(v):
            if par[w] != v and not np.any(g.h_neighbors(v) == par[w]):
                viol.append((int(v), int(w)))
        return VertexCombinatorics(int(v), self.ancestry(v), self.SI(v), self.S(v), self.T(v),
                                   D, DG, viol)


def combinatorics(graph: FillingGraph, v: int, max_j: int | None = None) -> VertexCombinatorics:
    return Combinatorics(graph).vertex(v, max_j)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def edge_list_lines(graph: FillingGraph) -> list[str]:
    ids = graph.space.point_ids
    fmt = lambda v: f"({ids[graph.point[v]]} {int(graph.level[v])})"  # noqa: E731
    par = graph.tree_parent
    lines = []
    for v in range(graph.n_vertices):
        for u in graph.h_neighbors(v):
            if u > v:
                lines.append(f"{fmt(v)} {fmt(u)} H")
        for w in graph.children(v):
            tag = "T" if par is not None and par[w] == v else "V"
            lines.append(f"{fmt(v)} {fmt(w)} {tag}")
    return lines


def graph_summary(graph: FillingGraph) -> dict:
    per_level = []
    for k in range(graph.depth + 1):
        vs = graph.level_vertices(k)
        deg = graph.h_degree[vs]
        per_level.append({"level": k, "vertices": int(vs.size),
                          "h_degree_max": int(deg.max()) if vs.size else 0,
                          "h_degree_mean": float(deg.mean()) if vs.size else 0.0})
    return {"alpha": graph.alpha, "tau": graph.tau, "step": graph.step, "depth": graph.depth,
            "vertices": graph.n_vertices, "horizontal_edges": int(graph.h_indices.size // 2),
            "vertical_edges": int(graph.d_indices.size), "N2": graph.N2, "levels": per_level}


def write_graph(graph: FillingGraph, edges_path, summary_path=None) -> None:
    with open(edges_path, "w") as fh:
        fh.write("\n".join(edge_list_lines(graph)) + "\n")
    if summary_path is not None:
        with open(summary_path, "w") as fh:
            fh.write(json.dumps(graph_summary(graph), sort_keys=True, indent=1) + "\n")
