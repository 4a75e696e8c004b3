"""Hot numeric kernels.

Each kernel has a numba implementation and a pure numpy/python fallback with
identical semantics.  Set ``CONFDIM_DISABLE_NUMBA=1`` to force the fallback
(useful for debugging and for the benchmark in ``benchmarks/``).
"""
from __future__ import annotations

import heapq
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and os.environ.get("CONFDIM_DISABLE_NUMBA", "0") in ("", "0")


# ---------------------------------------------------------------------------
# greedy nested nets
# ---------------------------------------------------------------------------

def _greedy_extend_np(D, accepted, threshold):
    accepted = accepted.copy()
    n = D.shape[0]
    mind = np.full(n, np.inf)
    idx = np.flatnonzero(accepted)
    if idx.size:
        mind = D[idx].min(axis=0)
    for i in range(n):
        if accepted[i]:
            continue
        if mind[i] >= threshold:
            accepted[i] = True
            np.minimum(mind, D[i], out=mind)
    return accepted


def _greedy_extend_py(D, accepted, threshold):
    accepted = accepted.copy()
    n = D.shape[0]
    mind = np.empty(n)
    for j in range(n):
        mind[j] = np.inf
    for a in range(n):
        if accepted[a]:
            for j in range(n):
                if D[a, j] < mind[j]:
                    mind[j] = D[a, j]
    for i in range(n):
        if accepted[i]:
            continue
        if mind[i] >= threshold:
            accepted[i] = True
            for j in range(n):
                if D[i, j] < mind[j]:
                    mind[j] = D[i, j]
    return accepted


# ---------------------------------------------------------------------------
# vertex-weighted shortest path (separation oracle)
# ---------------------------------------------------------------------------

def _vertex_dijkstra_py(indptr, indices, weight, is_source, is_sink, full):
    """Min weight-sum path from any source to any sink.

    A path pays ``weight[w]`` on entering ``w`` (the source pays its own
    weight).  Sinks are terminal: the search never expands out of a sink.
    Returns ``(best_sink, dist, pred)``; ``best_sink`` is -1 when no sink is
    reachable.  With ``full`` the search runs to exhaustion so ``dist`` is
    exact at every sink, otherwise it stops at the first sink popped.
    """
    n = weight.shape[0]
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    for s in range(n):
        if is_source[s]:
            dist[s] = weight[s]
            heap.append((weight[s], np.int64(s)))
    heapq.heapify(heap)
    best = -1
    best_d = np.inf
    while len(heap) > 0:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if is_sink[u]:
            if d < best_d:
                best_d = d
                best = u
            # first sink popped is optimal; ties resolved by heap order
            if not full:
                break
            continue
        for e in range(indptr[u], indptr[u + 1]):
            w = indices[e]
            if done[w]:
                continue
            nd = d + weight[w]
            if nd < dist[w]:
                dist[w] = nd
                pred[w] = u
                heapq.heappush(heap, (nd, np.int64(w)))
    return best, dist, pred


# ---------------------------------------------------------------------------
# triangle inequality audit
# ---------------------------------------------------------------------------

def _triangle_worst_np(D):
    n = D.shape[0]
    worst = -np.inf
    wit = (-1, -1, -1)
    for k in range(n):
        slack = D - (D[:, k][:, None] + D[k, :][None, :])
        flat = int(np.argmax(slack))
        val = slack.flat[flat]
        if val > worst:
            worst = float(val)
            wit = (flat // n, flat % n, k)
    return worst, wit


def _triangle_worst_py(D):
    n = D.shape[0]
    worst = -np.inf
    wi = -1
    wj = -1
    wk = -1
    for k in range(n):
        for i in range(n):
            dik = D[i, k]
            for j in range(n):
                val = D[i, j] - dik - D[k, j]
                if val > worst:
                    worst = val
                    wi = i
                    wj = j
                    wk = k
    return worst, (wi, wj, wk)


# ---------------------------------------------------------------------------
# doubling constant: greedy r/2-separated subsets of balls
# ---------------------------------------------------------------------------

def _doubling_counts_np(D, centers, radii):
    out = np.zeros((centers.shape[0], radii.shape[0]), dtype=np.int64)
    for a, c in enumerate(centers):
        row = D[c]
        for b, r in enumerate(radii):
            ball = np.flatnonzero(row < r)
            sub = D[np.ix_(ball, ball)]
            acc = _greedy_extend_np(sub, np.zeros(ball.size, dtype=np.bool_), 0.5 * r)
            out[a, b] = int(acc.sum())
    return out


def _doubling_counts_py(D, centers, radii):
    out = np.zeros((centers.shape[0], radii.shape[0]), dtype=np.int64)
    n = D.shape[0]
    chosen = np.empty(n, dtype=np.int64)
    for a in range(centers.shape[0]):
        c = centers[a]
        for b in range(radii.shape[0]):
            r = radii[b]
            half = 0.5 * r
            m = 0
            for i in range(n):
                if D[c, i] >= r:
                    continue
                ok = True
                for t in range(m):
                    if D[i, chosen[t]] < half:
                        ok = False
                        break
                if ok:
                    chosen[m] = i
                    m += 1
            out[a, b] = m
    return out


if USE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    greedy_extend = _jit(_greedy_extend_py)
    vertex_dijkstra = _jit(_vertex_dijkstra_py)
    triangle_worst = _jit(_triangle_worst_py)
    doubling_counts = _jit(_doubling_counts_py)
else:
    greedy_extend = _greedy_extend_np
    vertex_dijkstra = _vertex_dijkstra_py
    triangle_worst = _triangle_worst_np
    doubling_counts = _doubling_counts_np

BACKENDS = {
    "numpy": {
        "greedy_extend": _greedy_extend_np,
        "vertex_dijkstra": _vertex_dijkstra_py,
        "triangle_worst": _triangle_worst_np,
        "doubling_counts": _doubling_counts_np,
    },
}
if numba is not None:
    BACKENDS["numba"] = {
        "greedy_extend": numba.njit(cache=True)(_greedy_extend_py),
        "vertex_dijkstra": numba.njit(cache=True)(_vertex_dijkstra_py),
        "triangle_worst": numba.njit(cache=True)(_triangle_worst_py),
        "doubling_counts": numba.njit(cache=True)(_doubling_counts_py),
    }
