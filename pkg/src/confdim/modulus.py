"""Combinatorial p-modulus of annulus-crossing path families.

The solver is a cutting-plane loop: a vertex-weighted shortest path search
finds the most violated source-to-sink path, the path joins the constraint
set, and the restricted convex program is re-solved.  For ``p = 1`` that
program is an LP (HiGHS); for ``p > 1`` it is solved through its smooth
Lagrangian dual with L-BFGS-B, with a dense interior-point fallback when the
dual gap cannot be certified.

Families with many nodes skip the cold start: ``p = 1`` is an exact vertex
min-cut, and ``p > 1`` first solves a node-potential reformulation whose
multipliers decompose into a path flow.  That flow gives a weak-duality lower
bound; if the gap is small the density is returned directly, otherwise its
heaviest paths seed the cutting-plane loop.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linprog, minimize
from scipy.sparse import csr_matrix, issparse
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from . import _kernels
from .errors import PathCapError, UnsupportedExponentError
from .nets_filling import FillingGraph, _lt

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-6
KKT_TOL = 1e-8
OUTER_CAP = 10_000
INNER_CAP = 100_000
LARGE_FAMILY = 300   # node count above which "auto" avoids cold-start cutting planes
SEED_SLACK = 1e-3    # relative slack for warm-start paths
CERT_GAP = 1e-7      # relative primal-dual gap accepted without constraint generation


# ---------------------------------------------------------------------------
# path families
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathFamily:
    """Level ``n+k`` horizontal paths from ``B_v`` out of ``2 B_v``.

    ``nodes`` are global vertex ids.  Adjacency is local (indices into
    ``nodes``) and only leaves non-sink nodes, so every source-to-sink walk is
    truncated at its first sink.  Variables live on ``universe`` nodes;
    sinks outside the universe carry weight zero.
    """

    base: int
    k: int
    nodes: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    is_source: np.ndarray
    is_sink: np.ndarray
    universe: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def n_vars(self) -> int:
        return int(self.universe.sum())

    @property
    def var_index(self) -> np.ndarray:
        idx = np.full(self.size, -1, dtype=np.int64)
        idx[self.universe] = np.arange(self.n_vars)
        return idx

    def signature(self, p: float) -> bytes:
        parts = [np.int64(self.size).tobytes(), self.indptr.tobytes(), self.indices.tobytes(),
                 np.packbits(self.is_source).tobytes(), np.packbits(self.is_sink).tobytes(),
                 np.packbits(self.universe).tobytes(), np.float64(p).tobytes()]
        return b"|".join(parts)

    def is_empty(self) -> bool:
        best, _, _ = _kernels.vertex_dijkstra(self.indptr, self.indices,
                                              np.zeros(self.size), self.is_source, self.is_sink, False)
        return best < 0


def _local_csr(nodes, graph: FillingGraph, expandable):
    pos = {int(u): i for i, u in enumerate(nodes)}
    indptr = [0]
    indices = []
    for i, u in enumerate(nodes):
        if expandable[i]:
            nb = [pos[int(w)] for w in graph.h_neighbors(u) if int(w) in pos]
            indices.extend(sorted(nb))
        indptr.append(len(indices))
    return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def custom_family(adjacency: dict, sources, sinks, universe=None, base: int = -1, k: int = 0) -> PathFamily:
    """Family over an explicit small graph ``{node: neighbours}`` (nodes ``0..m-1``)."""
    m = len(adjacency)
    is_source = np.zeros(m, dtype=np.bool_)
    is_source[list(sources)] = True
    is_sink = np.zeros(m, dtype=np.bool_)
    is_sink[list(sinks)] = True
    uni = np.ones(m, dtype=np.bool_)
    if universe is not None:
        uni[:] = False
        uni[list(universe)] = True
    indptr, indices = [0], []
    for i in range(m):
        if not is_sink[i]:
            indices.extend(sorted(int(j) for j in adjacency[i]))
        indptr.append(len(indices))
    return PathFamily(base, k, np.arange(m, dtype=np.int64), np.asarray(indptr, dtype=np.int64),
                      np.asarray(indices, dtype=np.int64), is_source, is_sink, uni)


def path_family(graph: FillingGraph, v: int, k: int, restrict_support: bool = True) -> PathFamily:
    """Build the family of level ``n_v + k`` paths crossing the annulus ``2B_v \\ B_v``.

    With ``restrict_support=False`` every node of the family carries a
    variable, including sinks whose balls miss ``3B_v``.
    """
    n = int(graph.level[v])
    m = n + k
    if k < 1 or m > graph.depth:
        raise ValueError(f"offset k={k} out of range for vertex at level {n}")
    D = graph.space.dist
    r, rm = float(graph.radius(n)), float(graph.radius(m))
    x = graph.point[v]
    dx = D[x]
    lev = graph.level_vertices(m)
    # any vertex reached before the first sink has B_w inside 2B_v, so only
    # vertices within 2r + 2 tau rm of x can appear on a truncated path
    reach = 2.0 * r + 2.0 * graph.tau * rm
    cand = lev[dx[graph.point[lev]] < reach]
    inball = _lt(D[graph.point[cand]], rm)
    src = (inball & _lt(dx, r)[None, :]).any(axis=1)
    snk = (inball & ~_lt(dx, 2.0 * r)[None, :]).any(axis=1)
    uni = (inball & _lt(dx, 3.0 * r)[None, :]).any(axis=1)
    # keep universe vertices plus sinks adjacent to non-sink universe vertices
    keep = uni.copy()
    pos = {int(u): i for i, u in enumerate(cand)}
    for i in np.flatnonzero(uni & ~snk):
        for w in graph.h_neighbors(cand[i]):
            j = pos.get(int(w))
            if j is not None and snk[j]:
                keep[j] = True
    nodes = cand[keep]
    is_source, is_sink, universe = src[keep], snk[keep], uni[keep]
    if not restrict_support:
        universe = np.ones(nodes.size, dtype=np.bool_)
    indptr, indices = _local_csr(nodes, graph, ~is_sink)
    return PathFamily(int(v), int(k), nodes.astype(np.int64), indptr, indices,
                      is_source, is_sink, universe)


def enumerate_paths(family: PathFamily, cap: int | None = None) -> list[tuple]:
    """All simple source-to-sink paths, each truncated at its first sink (local indices)."""
    out: list[tuple] = []
    indptr, indices, sink = family.indptr, family.indices, family.is_sink
    alive = _reaches_sink(family)
    budget = None if cap is None else 1000 * (cap + 1)
    for s in np.flatnonzero(family.is_source & alive):
        stack = [(int(s), [int(s)], {int(s)})]
        while stack:
            u, path, seen = stack.pop()
            if budget is not None:
                budget -= 1
                if budget < 0:
                    raise PathCapError(f"path enumeration exceeded its budget (cap {cap})")
            if sink[u]:
                out.append(tuple(path))
                if cap is not None and len(out) > cap:
                    raise PathCapError(f"more than {cap} simple paths")
                continue
            for w in indices[indptr[u]:indptr[u + 1]][::-1]:
                w = int(w)
                if alive[w] and w not in seen:
                    stack.append((w, path + [w], seen | {w}))
    return out


def _reaches_sink(family: PathFamily) -> np.ndarray:
    """Nodes from which some sink is reachable."""
    tails = np.repeat(np.arange(family.size), np.diff(family.indptr))
    G = csr_matrix((np.ones(tails.size), (family.indices, tails)), shape=(family.size,) * 2)
    alive = family.is_sink.copy()
    frontier = np.flatnonzero(alive)
    while frontier.size:
        nxt = np.unique(G[frontier].indices)
        nxt = nxt[~alive[nxt]]
        alive[nxt] = True
        frontier = nxt
    return alive


# ---------------------------------------------------------------------------
# inner convex program: min sum s^p  s.t. A s >= 1, s >= 0
# ---------------------------------------------------------------------------

def _solve_lp(A: np.ndarray):
    m, n = A.shape
    res = linprog(np.ones(n), A_ub=-A, b_ub=-np.ones(m), bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solve failed: {res.message}")
    sigma = np.maximum(res.x, 0.0)
    lam = np.maximum(-np.asarray(res.ineqlin.marginals), 0.0)
    return sigma, lam, 0


def _sigma_of(s, p):
    return (np.maximum(s, 0.0) / p) ** (1.0 / (p - 1.0))


def _dual_value(A, p, lam):
    s = np.maximum(A.T @ lam, 0.0)
    return float(lam.sum() - (p - 1.0) * np.sum((s / p) ** (p / (p - 1.0))))


def certified_gap(A, p, sigma, lam) -> tuple[np.ndarray, float, float]:
    """Scale ``sigma`` to exact feasibility; return it with primal and dual bounds."""
    if A.shape[0] == 0:
        return sigma, 0.0, 0.0
    lo = (A @ sigma).min()
    if lo <= 0.0:
        return sigma, math.inf, _dual_value(A, p, lam)
    if lo < 1.0:
        sigma = sigma / lo
    primal = float(np.sum(sigma ** p))
    return sigma, primal, _dual_value(A, p, np.maximum(lam, 0.0))


def _solve_dual(A: np.ndarray, p: float, lam0=None, tol: float = KKT_TOL, max_iter: int = INNER_CAP):
    m, n = A.shape
    q = p / (p - 1.0)

    def negdual(lam):
        s = np.maximum(A.T @ lam, 0.0)
        sig = (s / p) ** (1.0 / (p - 1.0))
        g = lam.sum() - (p - 1.0) * np.sum((s / p) ** q)
        return -g, -(1.0 - A @ sig)

    if lam0 is None or lam0.size != m:
        lam_init = np.full(m, p / max(float(A.sum(axis=1).max()), 1.0) ** (p - 1.0) / max(m, 1))
    else:
        lam_init = np.maximum(lam0, 0.0)
    res = minimize(negdual, lam_init, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * m,
                   options={"maxiter": max_iter, "maxfun": max_iter, "ftol": 1e-15, "gtol": tol * 1e-2})
    lam = np.maximum(res.x, 0.0)
    return _sigma_of(A.T @ lam, p), lam, int(res.nit)


def _solve_ipm(A: np.ndarray, p: float, tol: float = 1e-12, max_iter: int = 200):
    """Dense primal-dual interior point method (Mehrotra predictor-corrector).

    Solves ``min sum x^p`` over ``A x - w = 1, x, w >= 0``; ``y`` multiplies
    the path constraints and ``z`` the sign constraints.
    """
    A = A.toarray() if issparse(A) else A
    m, n = A.shape
    x = np.full(n, 2.0 / max(A.sum(axis=1).min(), 1.0))
    w = A @ x - 1.0
    w = np.maximum(w, 1.0)
    y = np.ones(m)
    z = np.ones(n)
    use_dual = m < n

    def direction(H, rd, rp, r1, r2):
        dxi = H + z / x
        if use_dual:
            Dx = 1.0 / dxi
            rhs = (r1 - y * rp) / y - A @ (Dx * (-rd + r2 / x))
            K = (A * Dx[None, :]) @ A.T
            K[np.diag_indices(m)] += w / y
            dy = _spd_solve(K, rhs)
            dx = Dx * (-rd + A.T @ dy + r2 / x)
        else:
            K = (A.T * (y / w)[None, :]) @ A
            K[np.diag_indices(n)] += dxi
            rhs = -rd + A.T @ ((r1 - y * rp) / w) + r2 / x
            dx = _spd_solve(K, rhs)
            dy = (r1 - y * (A @ dx + rp)) / w
        dw = A @ dx + rp
        dz = (r2 - z * dx) / x
        return dx, dw, dy, dz

    def max_step(v, dv):
        neg = dv < 0
        return min(1.0, float((-v[neg] / dv[neg]).min())) if neg.any() else 1.0

    for it in range(max_iter):
        g = p * x ** (p - 1.0) if p > 1.0 else np.ones(n)
        H = p * (p - 1.0) * x ** (p - 2.0) if p > 1.0 else np.zeros(n)
        rd = g - A.T @ y - z
        rp = A @ x - w - 1.0
        mu = (w @ y + x @ z) / (m + n)
        if np.abs(rp).max() < 1e-10 and np.all(y >= 0):
            _, primal, dual = certified_gap(A, p, np.maximum(x, 0.0), y)
            if primal - dual <= tol * max(primal, 1e-300):
                break
        # predictor
        dx, dw, dy, dz = direction(H, rd, rp, -w * y, -x * z)
        ap = min(max_step(x, dx), max_step(w, dw))
        ad = min(max_step(y, dy), max_step(z, dz))
        mu_aff = ((w + ap * dw) @ (y + ad * dy) + (x + ap * dx) @ (z + ad * dz)) / (m + n)
        cen = (mu_aff / mu) ** 3
        # corrector
        dx, dw, dy, dz = direction(H, rd, rp, cen * mu - w * y - dw * dy, cen * mu - x * z - dx * dz)
        ap = 0.995 * min(max_step(x, dx), max_step(w, dw))
        ad = 0.995 * min(max_step(y, dy), max_step(z, dz))
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))) or max(ap, ad) < 1e-12:
            break
        x = x + ap * dx
        w = w + ap * dw
        y = y + ad * dy
        z = z + ad * dz
    return x, y, it


def _spd_solve(K, rhs):
    try:
        c = cho_factor(K, check_finite=False)
        return cho_solve(c, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


def solve_constraints(A: np.ndarray, p: float, lam0=None, tol: float = KKT_TOL,
                      max_iter: int = INNER_CAP):
    """Solve ``min sum s^p`` over ``A s >= 1, s >= 0``; returns ``(sigma, lambda, iters)``.

    For ``p > 1`` the warm-started dual ascent is accepted only when its
    certified duality gap is within ``tol`` (relative); otherwise the
    interior point method takes over.
    """
    if p < 1.0:
        raise UnsupportedExponentError(f"p={p} < 1 gives a non-convex program")
    if A.shape[0] == 0:
        return np.zeros(A.shape[1]), np.zeros(0), 0
    if p == 1.0:
        return _solve_lp(A)
    sigma, lam, it = _solve_dual(A, p, lam0, tol, max_iter)
    _, primal, dual = certified_gap(A, p, sigma, lam)
    if primal - dual <= tol * max(primal, 1e-300):
        return sigma, lam, it
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):  # guarded by step checks
        sigma, lam, it2 = _solve_ipm(A, p)
    return np.maximum(sigma, 0.0), np.maximum(lam, 0.0), it + it2


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class ModulusResult:
    value: float
    sigma: np.ndarray  # on the family's universe variables
    active_paths: list
    iterations: int
    status: str
    p: float = 1.0
    gap: float = 0.0
    family: PathFamily | None = field(default=None, repr=False)
    paths: list = field(default_factory=list, repr=False)

    def sigma_on_nodes(self) -> np.ndarray:
        """Density over the family's nodes (zero outside the universe)."""
        out = np.zeros(self.family.size)
        out[self.family.universe] = self.sigma
        return out

    def sigma_by_vertex(self) -> dict:
        fam = self.family
        vals = self.sigma_on_nodes()
        return {int(u): float(s) for u, s in zip(fam.nodes, vals)}


def _path_cols(path, var_index) -> np.ndarray:
    cols = var_index[list(path)]
    return np.unique(cols[cols >= 0])


def _rows_matrix(rows: list, n_vars: int) -> csr_matrix:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([r.size for r in rows])
    indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    return csr_matrix((np.ones(indices.size), indices, indptr), shape=(len(rows), n_vars))


def _path_matrix(paths, var_index, n_vars) -> csr_matrix:
    return _rows_matrix([_path_cols(pth, var_index) for pth in paths], n_vars)


def _finalize(family, paths, sigma, p, iterations, status, gap):
    var_index = family.var_index
    A = _path_matrix(paths, var_index, family.n_vars)
    if A.shape[0]:
        lo = (A @ sigma).min()
        if 0.0 < lo < 1.0:
            sigma = sigma / lo
        sums = A @ sigma
        active = [paths[i] for i in np.flatnonzero(sums <= 1.0 + 1e-6)]
    else:
        active = []
    value = float(np.sum(sigma ** p))
    return ModulusResult(value, sigma, active, iterations, status, p, gap, family, list(paths))


def _check_p(p):
    if not p >= 1.0:
        raise UnsupportedExponentError(f"p={p}: only p >= 1 is supported")


def solve_modulus(family: PathFamily, p: float, tol: float = KKT_TOL, feas_tol: float = FEAS_TOL,
                  max_outer: int = OUTER_CAP, max_inner: int = INNER_CAP, batch: int = 256,
                  method: str = "auto", seed_paths=None, potential=None) -> ModulusResult:
    """Modulus of ``family`` by constraint generation.

    ``method="auto"`` hands large ``p = 1`` families to the exact min-cut
    solver and seeds large ``p > 1`` families with the near-tight paths of
    the potential-program density; ``"cutting_plane"`` never does either and
    ``"flow"`` forces the min-cut solver (``p = 1`` only).  ``potential`` is
    a precomputed :func:`potential_density` result to reuse.
    """
    _check_p(p)
    if method not in ("auto", "cutting_plane", "flow"):
        raise ValueError(f"unknown method {method!r}")
    large = method == "auto" and family.size > LARGE_FAMILY
    if method == "flow" or (large and p == 1.0):
        if p != 1.0:
            raise ValueError("the min-cut solver needs p = 1")
        return modulus_by_flow(family)
    if large and seed_paths is None and not family.is_empty():
        sigma0, dual_paths, amounts, it = potential if potential is not None else potential_density(family, p)
        upper = float(np.sum(sigma0 ** p))
        gap = (upper - path_dual_bound(family, p, dual_paths, amounts)) / max(upper, 1e-300) if dual_paths else math.inf
        if gap <= CERT_GAP:
            return _result_from_density(family, sigma0, p, it, "optimal", max(gap, 0.0))
        # not certified: restart constraint generation from the heaviest dual paths
        logger.debug("potential warm start gap %.3g; falling back to constraint generation", gap)
        order = np.argsort(-amounts, kind="stable")[:4 * max(family.n_vars, 1)]
        on_nodes = np.zeros(family.size)
        on_nodes[family.universe] = sigma0
        seed_paths = [dual_paths[i] for i in order] + tight_paths(family, on_nodes, SEED_SLACK)
    n_vars = family.n_vars
    var_index = family.var_index
    weights = np.zeros(family.size)
    sigma = np.zeros(n_vars)
    paths: list[tuple] = []
    rows: list[np.ndarray] = []
    seen = set()
    lam = None
    gap = 0.0

    def add(path):
        cols = _path_cols(path, var_index)
        key = cols.tobytes()
        if key in seen:
            return False
        seen.add(key)
        paths.append(path)
        rows.append(cols)
        return True

    # single-vertex paths are always constraints; seed them up front
    for u in np.flatnonzero(family.is_source & family.is_sink):
        add((int(u),))
    for path in seed_paths or ():
        add(tuple(int(u) for u in path))
    if paths:
        sigma, lam, _ = solve_constraints(_rows_matrix(rows, n_vars), p, None, tol, max_inner)
    for it in range(max_outer):
        weights[family.universe] = sigma
        best, dist, pred = _kernels.vertex_dijkstra(family.indptr, family.indices, weights,
                                                    family.is_source, family.is_sink, batch > 1)
        if best < 0:
            if not paths:
                return ModulusResult(0.0, np.zeros(n_vars), [], it, "empty_family", p, 0.0, family, [])
            break
        if dist[best] >= 1.0 - feas_tol:
            gap = 0.0
            break
        gap = 1.0 - float(dist[best])
        # most violated path first, then one path per further violated sink
        sinks = np.flatnonzero(family.is_sink & (dist < 1.0 - feas_tol))
        sinks = sinks[np.lexsort((sinks, dist[sinks]))][:batch]
        added = 0
        for t in sinks:
            path = [int(t)]
            while pred[path[-1]] >= 0:
                path.append(int(pred[path[-1]]))
            added += add(tuple(path[::-1]))
        if not added:
            # numerical stall: the inner solution is not feasible on a known path
            logger.debug("repeated separating path; stopping with gap %.3g", gap)
            break
        A = _rows_matrix(rows, n_vars)
        if lam is not None:
            lam = np.append(lam, np.zeros(A.shape[0] - lam.size))
        sigma, lam, _ = solve_constraints(A, p, lam, tol, max_inner)
    else:
        return _finalize(family, paths, sigma, p, max_outer, "iteration_cap", gap)
    return _finalize(family, paths, sigma, p, it + 1, "optimal", gap)


# ---------------------------------------------------------------------------
# path-free formulations for large families
# ---------------------------------------------------------------------------

def _arc_arrays(family: PathFamily):
    tails = np.repeat(np.arange(family.size), np.diff(family.indptr))
    return tails, family.indices.copy()


def _relevant_nodes(family: PathFamily) -> np.ndarray:
    """Nodes lying on at least one source-to-sink walk."""
    n = family.size
    tails, heads = _arc_arrays(family)
    adj = csr_matrix((np.ones(tails.size), (tails, heads)), shape=(n, n))

    def reach(mat, seeds):
        seen = np.zeros(n, dtype=np.bool_)
        frontier = np.flatnonzero(seeds)
        seen[frontier] = True
        while frontier.size:
            nxt = mat[frontier].indices
            nxt = np.unique(nxt[~seen[nxt]])
            seen[nxt] = True
            frontier = nxt
        return seen

    return reach(adj, family.is_source) & reach(adj.T.tocsr(), family.is_sink)


def tight_paths(family: PathFamily, density_on_nodes: np.ndarray, tol: float = 1e-6) -> list[tuple]:
    """One shortest path per sink whose density length is at most ``1 + tol``."""
    best, dist, pred = _kernels.vertex_dijkstra(family.indptr, family.indices, density_on_nodes,
                                                family.is_source, family.is_sink, True)
    if best < 0:
        return []
    out = []
    for t in np.flatnonzero(family.is_sink & (dist <= 1.0 + tol)):
        path = [int(t)]
        while pred[path[-1]] >= 0:
            path.append(int(pred[path[-1]]))
        out.append(tuple(path[::-1]))
    return out


def _shortest_length(family: PathFamily, density_on_nodes: np.ndarray) -> float:
    best, dist, _ = _kernels.vertex_dijkstra(family.indptr, family.indices, density_on_nodes,
                                             family.is_source, family.is_sink, False)
    return math.inf if best < 0 else float(dist[best])


def _result_from_density(family, sigma, p, iterations, status, gap):
    on_nodes = np.zeros(family.size)
    on_nodes[family.universe] = sigma
    lo = _shortest_length(family, on_nodes)
    if 0.0 < lo < 1.0:
        sigma = sigma / lo
        on_nodes /= lo
    active = tight_paths(family, on_nodes)
    return ModulusResult(float(np.sum(sigma ** p)), sigma, active, iterations, status, p, gap,
                         family, list(active))


def _empty_result(family, p):
    return ModulusResult(0.0, np.zeros(family.n_vars), [], 0, "empty_family", p, 0.0, family, [])


def layer_upper_bound(family: PathFamily, p: float) -> float:
    """Modulus upper bound from the layers of universe hop distance.

    With ``dist`` the least number of universe vertices on a walk from a
    source, every path meets each layer ``{dist == j}``, ``j = 1..l``, where
    ``l`` is the least value at a sink.  Weighting layer ``j`` by
    ``w_j`` with ``sum w_j = 1`` is admissible; the best such weights give
    ``min_j n_j`` for ``p = 1`` and ``(sum n_j^(-1/(p-1)))^(1-p)`` otherwise.
    """
    _check_p(p)
    weight = family.universe.astype(np.float64)
    best, dist, _ = _kernels.vertex_dijkstra(family.indptr, family.indices, weight,
                                             family.is_source, family.is_sink, True)
    if best < 0:
        return 0.0
    ell = int(round(dist[family.is_sink].min()))
    if ell == 0:
        return math.inf  # a path avoiding every variable: nothing is admissible
    d = dist[family.universe]
    counts = np.bincount(d[np.isfinite(d)].astype(np.int64), minlength=ell + 1)[1:ell + 1]
    counts = counts.astype(np.float64)
    if p == 1.0:
        return float(counts.min())
    return float(np.sum(counts ** (-1.0 / (p - 1.0))) ** (1.0 - p))


def modulus_by_flow(family: PathFamily) -> ModulusResult:
    """``p = 1`` modulus as a minimum vertex cut (max-flow with split vertices).

    Universe vertices get unit capacity, everything else is uncuttable, so the
    cut value equals the LP optimum and the cut indicator is an optimal density.
    """
    n = family.size
    if family.is_empty():
        return _empty_result(family, 1.0)
    if np.any(family.is_source & family.is_sink & ~family.universe):
        raise ValueError("a zero-weight single-vertex path makes the modulus infinite")
    big = int(family.universe.sum()) + 1
    tails, heads = _arc_arrays(family)
    S, T = 2 * n, 2 * n + 1
    src = np.flatnonzero(family.is_source)
    snk = np.flatnonzero(family.is_sink)
    rows = np.concatenate([2 * np.arange(n), 2 * tails + 1, np.full(src.size, S), 2 * snk + 1])
    cols = np.concatenate([2 * np.arange(n) + 1, 2 * heads, 2 * src, np.full(snk.size, T)])
    caps = np.concatenate([np.where(family.universe, 1, big), np.full(tails.size, big),
                           np.full(src.size, big), np.full(snk.size, big)]).astype(np.int32)
    C = csr_matrix((caps, (rows, cols)), shape=(2 * n + 2, 2 * n + 2))
    C.sum_duplicates()
    res = maximum_flow(C, S, T)
    R = (C - res.flow).tocsr()
    R.data[R.data < 0] = 0
    R.eliminate_zeros()
    order = breadth_first_order(R, S, directed=True, return_predecessors=False)
    reach = np.zeros(2 * n + 2, dtype=np.bool_)
    reach[order] = True
    cut = reach[0:2 * n:2] & ~reach[1:2 * n:2]
    sigma = cut[family.universe].astype(np.float64)
    out = _result_from_density(family, sigma, 1.0, 1, "optimal", 0.0)
    if abs(out.value - res.flow_value) > 0.5:
        raise RuntimeError("min cut does not match max flow")
    return out


def _potential_program(family: PathFamily):
    """Inequality form ``G z <= h`` over ``z = (phi on non-sinks, sigma on universe)``.

    A density is admissible iff some potential satisfies ``phi_s <= sigma_s``
    at sources, ``phi_w <= phi_u + sigma_w`` along arcs and ``phi_u + sigma_t >= 1``
    on arcs into sinks; sinks therefore need no potential of their own.
    Also returns, for each source and arc row, its ``(tail, head)`` with tail
    ``-1`` for a source row; the multipliers of those rows form a unit flow.
    """
    keep = _relevant_nodes(family)
    n = family.size
    pot = np.full(n, -1, dtype=np.int64)
    inner = keep & ~family.is_sink
    pot[inner] = np.arange(int(inner.sum()))
    n_phi = int(inner.sum())
    var = family.var_index
    n_sig = family.n_vars
    col_sig = lambda v: n_phi + var[v]  # noqa: E731
    rows, cols, vals, h = [], [], [], []
    ends = []

    def row(entries, rhs):
        r = len(h)
        for c, a in entries:
            rows.append(r)
            cols.append(c)
            vals.append(a)
        h.append(rhs)

    for s in np.flatnonzero(family.is_source & keep):
        ent = [(col_sig(s), -1.0)] if family.universe[s] else []
        if family.is_sink[s]:
            row(ent, -1.0)
        else:
            row(ent + [(pot[s], 1.0)], 0.0)
        ends.append((-1, s))
    tails, heads = _arc_arrays(family)
    ok = keep[tails] & keep[heads]
    for u, w in zip(tails[ok], heads[ok]):
        ent = [(pot[u], -1.0)]
        if family.universe[w]:
            ent.append((col_sig(w), -1.0))
        if family.is_sink[w]:
            row(ent, -1.0)
        else:
            row(ent + [(pot[w], 1.0)], 0.0)
        ends.append((u, w))
    for j in range(n_sig):
        row([(n_phi + j, -1.0)], 0.0)
    G = csr_matrix((vals, (rows, cols)), shape=(len(h), n_phi + n_sig))
    G.sum_duplicates()
    return G, np.asarray(h), n_phi, np.asarray(ends, dtype=np.int64).reshape(-1, 2)


def decompose_flow(family: PathFamily, ends: np.ndarray, flow: np.ndarray,
                   rel: float = 1e-7) -> tuple[list[tuple], np.ndarray]:
    """Greedy path decomposition of a source-to-sink flow given on ``ends`` rows.

    Flow below ``rel`` times the largest value is treated as noise; the walk
    always follows the heaviest remaining arc.  Returns paths and amounts.
    """
    flow = np.where(flow > rel * max(float(flow.max(initial=0.0)), 1e-300), flow, 0.0)
    inject = {}
    out: dict[int, dict[int, float]] = {}
    for (u, w), f in zip(ends.tolist(), flow.tolist()):
        if f <= 0.0:
            continue
        if u < 0:
            inject[w] = inject.get(w, 0.0) + f
        else:
            out.setdefault(u, {})[w] = f
    paths, amounts = [], []
    for s0 in sorted(inject):
        while inject[s0] > 0.0:
            path, amount, seen = [s0], inject[s0], {s0}
            while not family.is_sink[path[-1]]:
                nxt = out.get(path[-1])
                if not nxt:
                    break
                w = max(nxt, key=lambda j: (nxt[j], -j))
                if w in seen:
                    del nxt[w]  # drop numerical cycles
                    continue
                amount = min(amount, nxt[w])
                path.append(w)
                seen.add(w)
            if not family.is_sink[path[-1]]:
                inject[s0] = 0.0
                break
            inject[s0] -= amount
            if inject[s0] <= 0.0 or amount <= 0.0:
                inject[s0] = 0.0
            for a, b in zip(path[:-1], path[1:]):
                out[a][b] -= amount
                if out[a][b] <= 0.0:
                    del out[a][b]
            paths.append(tuple(path))
            amounts.append(amount)
    return paths, np.asarray(amounts)


def path_dual_bound(family: PathFamily, p: float, paths, amounts) -> float:
    """Weak-duality lower bound on the modulus from nonnegative path weights."""
    if p == 1.0 or not paths:
        raise ValueError("needs p > 1 and at least one path")
    A = _path_matrix(paths, family.var_index, family.n_vars)
    return _dual_value(A, p, np.asarray(amounts, dtype=np.float64))


def _step_to_boundary(v, dv) -> float:
    neg = dv < 0
    return min(1.0, float((-v[neg] / dv[neg]).min())) if neg.any() else 1.0


def _solve_potential_ipm(G, h, n_phi, p, tol=1e-9, max_iter=100):
    """Primal-dual interior point method for ``min sum sigma^p`` over ``G z <= h``.

    Mehrotra predictor-corrector on the dense normal system; ``y`` multiplies
    the inequalities and ``s`` is their slack.
    """
    m, n = G.shape
    GT = G.T.tocsr()
    z = np.concatenate([np.full(n_phi, 0.5), np.full(n - n_phi, 2.0)])
    # zero-weight arcs may leave no strictly interior point, so start infeasible
    s = np.maximum(h - G @ z, 1.0)
    y = np.ones(m)
    it = 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for it in range(max_iter):
            sig = z[n_phi:]
            g = np.concatenate([np.zeros(n_phi), p * sig ** (p - 1.0)])
            H = np.concatenate([np.zeros(n_phi), p * (p - 1.0) * sig ** (p - 2.0)])
            rd = g + GT @ y
            rp = G @ z + s - h
            scale = max(float(np.sum(sig ** p)), 1e-300)
            mu = float(s @ y) / m
            # stationarity residuals floor out through conditioning long after
            # the objective has settled, so only complementarity is tested
            if s @ y <= tol * scale and np.abs(rp).max() <= 1e-9:
                break
            K = (GT @ G.multiply((y / s)[:, None]).tocsr()).toarray()
            K[np.diag_indices(n)] += H
            try:
                chol = cho_factor(K, check_finite=False)
            except np.linalg.LinAlgError:
                K[np.diag_indices(n)] += 1e-12 * max(1.0, np.abs(K).max())
                try:
                    chol = cho_factor(K, check_finite=False)
                except np.linalg.LinAlgError:
                    break

            def direction(r1):
                dz = cho_solve(chol, -rd - GT @ ((r1 + y * rp) / s), check_finite=False)
                ds = -rp - G @ dz
                return dz, ds, (r1 - y * ds) / s

            dz, ds, dy = direction(-s * y)
            ap, ad = _step_to_boundary(s, ds), _step_to_boundary(y, dy)
            cen = (float((s + ap * ds) @ (y + ad * dy)) / m / mu) ** 3
            dz, ds, dy = direction(cen * mu - s * y - ds * dy)
            step = 0.995 * min(_step_to_boundary(s, ds), _step_to_boundary(y, dy))
            if step < 0.2:
                # the second-order correction can stall on the curved objective
                dz, ds, dy = direction(0.5 * mu - s * y)
                step = 0.995 * min(_step_to_boundary(s, ds), _step_to_boundary(y, dy))
            if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(dy))) or step < 1e-12:
                break
            z = z + step * dz
            s = s + step * ds
            y = y + step * dy
    sig = np.maximum(z[n_phi:], 0.0)
    return sig, y, float(s @ y) / max(float(np.sum(sig ** p)), 1e-300), it


def potential_density(family: PathFamily, p: float, tol: float = 1e-9):
    """Near-optimal primal and dual solutions from the potential program (``p > 1``).

    Returns ``(sigma, paths, amounts, iterations)``: the density on universe
    variables scaled to be admissible, and a path decomposition of the dual
    flow.  ``sum sigma^p`` and :func:`path_dual_bound` bracket the modulus.
    """
    G, h, n_phi, ends = _potential_program(family)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):  # guarded by step checks
        sigma, y, _, it = _solve_potential_ipm(G, h, n_phi, p, tol)
    on_nodes = np.zeros(family.size)
    on_nodes[family.universe] = sigma
    lo = _shortest_length(family, on_nodes)
    if 0.0 < lo < 1.0:
        sigma = sigma / lo
    paths, amounts = decompose_flow(family, ends, y[:len(ends)])
    return sigma, paths, amounts, it


def brute_force_modulus(family: PathFamily, p: float, path_cap: int = 200,
                        tol: float = KKT_TOL) -> ModulusResult:
    """Oracle: enumerate every simple path and solve the full program."""
    _check_p(p)
    paths = enumerate_paths(family, path_cap)
    if not paths:
        return ModulusResult(0.0, np.zeros(family.n_vars), [], 0, "empty_family", p, 0.0, family, [])
    uniq = {}
    for path in paths:
        uniq.setdefault(frozenset(path), path)
    paths = list(uniq.values())
    A = _path_matrix(paths, family.var_index, family.n_vars)
    sigma, _, it = solve_constraints(A, p, None, tol)
    return _finalize(family, paths, sigma, p, it, "optimal", 0.0)


def sample_paths(family: PathFamily, n: int, rng) -> list[tuple]:
    """Random simple source-to-sink paths by randomized DFS (may return fewer than ``n``)."""
    sources = np.flatnonzero(family.is_source)
    out = []
    if sources.size == 0:
        return out
    tries = 0
    while len(out) < n and tries < 20 * n:
        tries += 1
        u = int(rng.choice(sources))
        path, seen = [u], {u}
        while not family.is_sink[u]:
            nb = [int(w) for w in family.indices[family.indptr[u]:family.indptr[u + 1]] if int(w) not in seen]
            if not nb:
                break
            u = int(rng.choice(nb))
            path.append(u)
            seen.add(u)
        if family.is_sink[u]:
            out.append(tuple(path))
    return out


def path_sums(family: PathFamily, density_on_nodes: np.ndarray, paths) -> np.ndarray:
    return np.array([density_on_nodes[list(pth)].sum() for pth in paths])


# ---------------------------------------------------------------------------
# scale aggregation
# ---------------------------------------------------------------------------

MONOTONE_TOL = 1e-6


class ModulusCache:
    """Results keyed by family signature and exponent.

    Every new solve is compared with the cached values of the same family at
    other exponents: ``Mod_q <= Mod_p + tol`` must hold for ``q > p``.
    Violations are collected in ``monotonicity_violations`` as
    ``(base, k, p, q, Mod_p, Mod_q)``.
    """

    def __init__(self, monotone_tol: float = MONOTONE_TOL):
        self.store: dict[bytes, ModulusResult] = {}
        self.by_family: dict[bytes, dict[float, float]] = {}
        self.monotone_tol = monotone_tol
        self.monotonicity_violations: list[tuple] = []
        self.potentials: dict[bytes, tuple] = {}
        self.hits = 0
        self.misses = 0

    def solve(self, family: PathFamily, p: float, **kw) -> ModulusResult:
        key = family.signature(p)
        res = self.store.get(key)
        if res is None:
            self.misses += 1
            pot = self.potentials.pop(key, None)
            res = solve_modulus(family, p, potential=pot, **kw)
            self.store[key] = res
            self._check_monotone(family, float(p), res.value)
        else:
            self.hits += 1
        return res

    def density_bound(self, family: PathFamily, p: float) -> float:
        """``sum sigma^p`` of an admissible density: exact for cached results,
        otherwise from the potential program (kept for the later solve)."""
        key = family.signature(p)
        res = self.store.get(key)
        if res is not None:
            return res.value
        if p == 1.0 or family.size <= LARGE_FAMILY or family.is_empty():
            return math.inf
        pot = self.potentials.get(key)
        if pot is None:
            pot = self.potentials[key] = potential_density(family, p)
        return float(np.sum(pot[0] ** p))

    def upper_bound(self, family: PathFamily, p: float) -> float:
        """Cheap bound on ``Mod_p``: cached value, cached smaller exponents, or layers."""
        res = self.store.get(family.signature(p))
        if res is not None:
            return res.value
        ub = layer_upper_bound(family, p)
        for q, val in self.by_family.get(family.signature(0.0), {}).items():
            if q <= p:
                ub = min(ub, val * (1.0 + self.monotone_tol))
        return ub

    def _check_monotone(self, family, p, value):
        seen = self.by_family.setdefault(family.signature(0.0), {})
        for q, other in seen.items():
            lo_p, lo_v, hi_p, hi_v = (q, other, p, value) if q < p else (p, value, q, other)
            if hi_v > lo_v + self.monotone_tol * max(1.0, lo_v):
                self.monotonicity_violations.append((family.base, family.k, lo_p, hi_p, lo_v, hi_v))
        seen[p] = value


@dataclass
class ScaleModulus:
    value: float
    k: int
    p: float
    argmax: int
    per_vertex: list  # (vertex, value, iterations, status)


def mod_p_at_scale_detail(graph: FillingGraph, p: float, k: int, cache: ModulusCache | None = None,
                          prune: bool = False, **kw) -> ScaleModulus:
    """Sup of the family moduli over base vertices at offset ``k``.

    With ``prune`` the families are solved in decreasing order of a cheap
    upper bound and a family is skipped once its bound cannot beat the
    running maximum; large families get a second chance to be skipped via
    the cost of the potential-program density.  The maximum is unchanged;
    skipped rows carry the bound as value and the status ``pruned``.
    """
    cache = ModulusCache() if cache is None else cache
    bases = [v for v in range(graph.n_vertices) if graph.level[v] + k <= graph.depth]
    fams = [path_family(graph, v, k) for v in bases]
    if prune:
        bounds = np.array([cache.upper_bound(f, p) for f in fams])
        order = np.argsort(-bounds, kind="stable")
    else:
        bounds = None
        order = np.arange(len(fams))
    rows: dict[int, tuple] = {}
    best, arg = 0.0, -1
    for i in order:
        v, fam = bases[i], fams[i]
        if prune:
            bound = float(bounds[i])
            if bound > best:
                bound = min(bound, cache.density_bound(fam, p))
            if bound <= best:
                rows[v] = (int(v), bound, 0, "pruned")
                continue
        res = cache.solve(fam, p, **kw)
        rows[v] = (int(v), res.value, res.iterations, res.status)
        if res.value > best or (res.value == best and v < arg):
            best, arg = res.value, int(v)
    return ScaleModulus(best, int(k), float(p), arg, [rows[v] for v in bases])


def mod_p_at_scale(graph: FillingGraph, p: float, k: int, cache: ModulusCache | None = None,
                   prune: bool = False, **kw) -> float:
    return mod_p_at_scale_detail(graph, p, k, cache, prune, **kw).value


def find_n0(graph: FillingGraph, p: float, eps0: float, k_range, cache=None) -> int | None:
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    cache = ModulusCache() if cache is None else cache
    for k in k_range:
        if k > graph.depth:
            break
        if mod_p_at_scale(graph, p, k, cache) < eps0:
            return int(k)
    return None


# ---------------------------------------------------------------------------
# critical exponent
# ---------------------------------------------------------------------------

def decay_slope(values, ks) -> float:
    """Least-squares slope of ``log M(k)`` against ``k``; ``-inf`` once a value hits zero."""
    vals = np.asarray(values, dtype=np.float64)
    if np.any(vals <= 0.0):
        return -math.inf
    if len(vals) < 2:
        return math.nan
    return float(np.polyfit(np.asarray(ks, dtype=np.float64), np.log(vals), 1)[0])


@dataclass
class DimensionEstimate:
    status: str  # bracket | below_one | inconclusive
    p_lo: float | None
    p_hi: float | None
    decisions: dict  # p -> (decays, slope, values)
    ks: list
    notes: list = field(default_factory=list)

    @property
    def interval(self):
        return (self.p_lo, self.p_hi)

    def describe(self) -> str:
        if self.status == "below_one":
            return "< 1 (decay already at p=1)"
        if self.status == "bracket":
            return f"[{self.p_lo:.4g}, {self.p_hi:.4g}]"
        return "inconclusive"


def modulus_profile(graph: FillingGraph, p: float, ks, cache: ModulusCache,
                    prune: bool = True) -> list[float]:
    return [mod_p_at_scale(graph, p, k, cache, prune) for k in ks]


def decides_decay(graph, p, ks, cache, decay_tol, prune: bool = True) -> tuple[bool, float, list]:
    vals = modulus_profile(graph, p, ks, cache, prune)
    slope = decay_slope(vals, ks)
    return bool(slope <= -decay_tol), slope, vals


def estimate_dimension_on_graph(graph: FillingGraph, ks=None, p_max: float = 8.0,
                                decay_tol: float = 0.1, p_tol: float = 0.05,
                                cache: ModulusCache | None = None) -> DimensionEstimate:
    cache = ModulusCache() if cache is None else cache
    ks = list(range(1, graph.depth + 1)) if ks is None else [k for k in ks if k <= graph.depth]
    decisions = {}
    if len(ks) < 2:
        return DimensionEstimate("inconclusive", None, None, decisions, ks,
                                 ["window too small: need at least two scales"])

    def decide(p):
        d = decides_decay(graph, p, ks, cache, decay_tol)
        decisions[float(p)] = d
        return d[0]

    if decide(1.0):
        return DimensionEstimate("below_one", None, 1.0, decisions, ks)
    lo, hi = 1.0, 2.0
    while not decide(hi):
        lo = hi
        hi *= 2.0
        if hi > p_max:
            return DimensionEstimate("inconclusive", lo, None, decisions, ks,
                                     [f"no decay up to p={p_max}"])
    while hi - lo > p_tol:
        mid = 0.5 * (lo + hi)
        if decide(mid):
            hi = mid
        else:
            lo = mid
    return DimensionEstimate("bracket", lo, hi, decisions, ks)


def estimate_dimension(space, alpha: float, tau: float, L: int, ks=None, **kw) -> DimensionEstimate:
    from .nets_filling import build_graph, build_nets
    graph = build_graph(build_nets(space, alpha, L), tau)
    return estimate_dimension_on_graph(graph, ks, **kw)


def write_scale_csv(path, graph: FillingGraph, results: list[ScaleModulus]) -> None:
    ids = graph.space.point_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["v_point", "v_level", "k", "p", "modulus", "iterations", "status"])
        for sm in results:
            for v, val, it, st in sm.per_vertex:
                w.writerow([ids[graph.point[v]], int(graph.level[v]), sm.k, repr(sm.p), repr(val), it, st])
