"""Diameter-ratio densities built from a second metric in the gauge.

Given a metric ``theta`` quasisymmetric to ``d`` (same point ids), the density
``rho'(v') = diam_theta(B_v') / diam_theta(2B_v)`` on level ``n + k``, scaled by
``4 eta(8) eta(K_d tau)``, is admissible for the annulus family of ``v``.  The
distortion ``eta`` is either supplied analytically or measured from triples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateSpaceError, SamplingError
from .metric_spaces import PointCloudSpace, audit_metric, snowflake
from .modulus import enumerate_paths, path_family, path_sums
from .nets_filling import FillingGraph, _lt
from . import _kernels

CLOSED_TOL = 1e-12
EXHAUSTIVE_TRIPLES_MAX = 128   # points; all ordered triples below this size
DEFAULT_TRIPLES = 200_000


def _le(d, r):
    return d <= r * (1.0 + CLOSED_TOL)


def distortion_samples(base: PointCloudSpace, theta: PointCloudSpace, rng=None,
                       n_triples: int = DEFAULT_TRIPLES) -> tuple[np.ndarray, np.ndarray]:
    """Upper envelope of ``theta(x,a)/theta(x,b)`` against ``t = d(x,a)/d(x,b)``.

    Returns sorted distinct ``t`` and the running maximum of observed ratios,
    so the second array is nondecreasing.
    """
    n = base.n
    D, T = base.dist, theta.dist
    ts, rs = [], []
    if n <= EXHAUSTIVE_TRIPLES_MAX:
        for x in range(n):
            others = np.delete(np.arange(n), x)
            dx, tx = D[x, others], T[x, others]
            ts.append((dx[:, None] / dx[None, :]).ravel())
            rs.append((tx[:, None] / tx[None, :]).ravel())
        t, r = np.concatenate(ts), np.concatenate(rs)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.integers(0, n, n_triples)
        a = rng.integers(0, n, n_triples)
        b = rng.integers(0, n, n_triples)
        ok = (x != a) & (x != b)
        x, a, b = x[ok], a[ok], b[ok]
        if x.size == 0:
            raise SamplingError("no usable triples")
        t = D[x, a] / D[x, b]
        r = T[x, a] / T[x, b]
    order = np.argsort(t, kind="stable")
    t, r = t[order], r[order]
    # collapse equal t (to rounding) onto their largest ratio
    key = np.round(np.log(t), 11)
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    t_u = t[starts]
    r_u = np.maximum.reduceat(r, starts)
    return t_u, np.maximum.accumulate(r_u)


@dataclass
class GaugeMetric:
    """A metric ``theta`` on the points of ``base`` with its distortion function."""

    base: PointCloudSpace
    theta: PointCloudSpace
    t_samples: np.ndarray = field(repr=False)
    eta_samples: np.ndarray = field(repr=False)
    analytic: Callable[[float], float] | None = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.base.point_ids != self.theta.point_ids:
            raise ValueError("theta must live on the same point ids as the base space")

    def eta(self, t: float) -> float:
        """Distortion at ``t``: analytic if supplied, else the log-log interpolated envelope."""
        if self.analytic is not None:
            return float(self.analytic(t))
        return self.eta_empirical(t)

    def eta_empirical(self, t: float) -> float:
        ts, es = self.t_samples, self.eta_samples
        if ts.size == 0 or not (ts[0] * (1 - 1e-12) <= t <= ts[-1] * (1 + 1e-12)):
            raise SamplingError(f"eta undefined at t={t:g}: sampled range "
                                f"[{ts[0] if ts.size else math.nan:g}, {ts[-1] if ts.size else math.nan:g}]")
        t = min(max(t, ts[0]), ts[-1])
        return float(np.exp(np.interp(np.log(t), np.log(ts), np.log(es))))

    def max_power_deviation(self, exponent: float) -> float:
        """Largest relative gap between the sampled envelope and ``t**exponent``."""
        return float(np.max(np.abs(self.eta_samples / self.t_samples ** exponent - 1.0)))


def make_gauge(base: PointCloudSpace, theta: PointCloudSpace, analytic=None, rng=None,
               n_triples: int = DEFAULT_TRIPLES, check: bool = True) -> GaugeMetric:
    if check:
        audit = audit_metric(theta.dist, rng=rng)
        if not audit.ok:
            raise DegenerateSpaceError(f"theta is not a metric: {audit}")
    ts, es = distortion_samples(base, theta, rng, n_triples)
    return GaugeMetric(base, theta, ts, es, analytic, theta.label)


def identity_gauge(space: PointCloudSpace, analytic: bool = True) -> GaugeMetric:
    return make_gauge(space, space, (lambda t: t) if analytic else None, check=False)


def snowflake_gauge(space: PointCloudSpace, exponent: float, analytic: bool = True) -> GaugeMetric:
    theta = snowflake(space, exponent)
    fn = (lambda t, e=exponent: t ** e) if analytic else None
    return make_gauge(space, theta, fn, check=False)


# ---------------------------------------------------------------------------
# the density
# ---------------------------------------------------------------------------

def _diam(T: np.ndarray, idx: np.ndarray) -> float:
    if idx.size < 2:
        return 0.0
    return float(T[np.ix_(idx, idx)].max())


def ball_members(graph: FillingGraph, v: int, factor: float = 1.0, closed: bool = False) -> np.ndarray:
    D = graph.space.dist
    r = factor * graph.vertex_radius(v)
    row = D[graph.point[v]]
    return np.flatnonzero(_le(row, r) if closed else _lt(row, r))


@dataclass
class GaugeDensity:
    base: int
    k: int
    vertices: np.ndarray  # level n+k vertex ids
    values: np.ndarray
    denominator: float

    def as_dict(self) -> dict:
        return {int(u): float(x) for u, x in zip(self.vertices, self.values)}


def gauge_admissible_density(gauge: GaugeMetric, graph: FillingGraph, v: int, k: int) -> GaugeDensity:
    """``diam_theta(B_v') / diam_theta(2B_v)`` on level ``n+k`` where ``B_v'`` meets closed ``2B_v``."""
    n = int(graph.level[v])
    m = n + k
    if k < 1 or m > graph.depth:
        raise ValueError(f"offset k={k} out of range for vertex at level {n}")
    T = gauge.theta.dist
    D = graph.space.dist
    denom = _diam(T, ball_members(graph, v, 2.0))
    if denom <= 0.0:
        raise DegenerateSpaceError(f"diam_theta(2B_v) = 0 at vertex {v}")
    closed2 = _le(D[graph.point[v]], 2.0 * graph.vertex_radius(v))
    lev = graph.level_vertices(m)
    rm = graph.radius(m)
    vals = np.zeros(lev.size)
    for i, u in enumerate(lev):
        members = np.flatnonzero(_lt(D[graph.point[u]], rm))
        if closed2[members].any():
            vals[i] = _diam(T, members) / denom
    return GaugeDensity(int(v), int(k), lev.astype(np.int64), vals, denom)


def admissibility_constant(gauge: GaugeMetric, K_d: float, tau: float) -> float:
    """``4 eta(8) eta(K_d tau)``."""
    return 4.0 * gauge.eta(8.0) * gauge.eta(K_d * tau)


@dataclass
class FeasibilityAudit:
    base: int
    k: int
    min_path_sum: float
    enumerated: int
    enumerated_failures: int
    ok: bool
    empty: bool = False


def audit_scaled_density(gauge: GaugeMetric, graph: FillingGraph, v: int, k: int, C: float,
                         path_cap: int = 2000) -> FeasibilityAudit:
    """Check ``C rho'`` against the annulus family of ``v``.

    The minimum path sum over the whole family comes from a shortest-path
    search, so ``ok`` covers every path; up to ``path_cap`` paths are also
    enumerated and checked one by one.
    """
    fam = path_family(graph, v, k)
    dens = gauge_admissible_density(gauge, graph, v, k)
    lookup = dens.as_dict()
    on_nodes = C * np.array([lookup.get(int(u), 0.0) for u in fam.nodes])
    best, dist, _ = _kernels.vertex_dijkstra(fam.indptr, fam.indices, on_nodes,
                                             fam.is_source, fam.is_sink, False)
    if best < 0:
        return FeasibilityAudit(int(v), int(k), math.inf, 0, 0, True, empty=True)
    lo = float(dist[best])
    try:
        paths = enumerate_paths(fam, path_cap)
    except Exception:  # too many to list; the shortest-path bound still covers them
        paths = []
    fails = int(np.sum(path_sums(fam, on_nodes, paths) < 1.0 - 1e-12)) if paths else 0
    return FeasibilityAudit(int(v), int(k), lo, len(paths), fails, lo >= 1.0 - 1e-12 and fails == 0)


def density_power_sums(gauge: GaugeMetric, graph: FillingGraph, v: int, ks, p: float,
                       C: float = 1.0) -> tuple[list[float], float]:
    """``sum (C rho')^p`` over level ``n+k`` for each ``k`` and the log-slope in ``k``."""
    sums = []
    for k in ks:
        d = gauge_admissible_density(gauge, graph, v, k)
        sums.append(float(np.sum((C * d.values) ** p)))
    vals = np.asarray(sums)
    slope = -math.inf if np.any(vals <= 0) else float(np.polyfit(np.asarray(ks, float), np.log(vals), 1)[0])
    return sums, slope


# ---------------------------------------------------------------------------
# diameter comparison audit
# ---------------------------------------------------------------------------

@dataclass
class DiamComparison:
    base: int
    k: int
    checked: int = 0
    vacuous: int = 0
    first_failures: int = 0
    ratio_failures: int = 0
    worst_lower: float = 0.0   # max of theta(x',z) / diam, must be <= 1
    worst_upper: float = 0.0   # max of diam / (2 eta(K_d) theta(x',z)), must be <= 1
    worst_ratio: float = 0.0   # max of ratio / bound, must be <= 1
    ratio_bound: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.first_failures == 0 and self.ratio_failures == 0

    def to_json(self) -> dict:
        return {"v": self.base, "k": self.k, "checked": self.checked, "vacuous": self.vacuous,
                "first_failures": self.first_failures, "ratio_failures": self.ratio_failures,
                "worst_lower": self.worst_lower, "worst_upper": self.worst_upper,
                "worst_ratio": self.worst_ratio, "ratio_bound": self.ratio_bound, "ok": self.ok,
                "notes": list(self.notes)}


def verify_diam_comparison(gauge: GaugeMetric, graph: FillingGraph, v: int, k: int,
                           K_d: float, rel_tol: float = 1e-12) -> DiamComparison:
    """Check both diameter comparisons for every ``v'`` on level ``n+k`` meeting closed ``2B_v``.

    A pair is vacuous when the annulus ``B_v' \\ (1/K_d) B_v'`` has no points;
    the ratio bound additionally needs ``2B_v \\ (1/K_d) B_v`` nonempty.
    """
    n = int(graph.level[v])
    m = n + k
    D, T = graph.space.dist, gauge.theta.dist
    rep = DiamComparison(int(v), int(k))
    r_n, r_m = graph.vertex_radius(v), graph.radius(m)
    x = graph.point[v]
    two_ball = ball_members(graph, v, 2.0)
    outer_ok = np.any(~_lt(D[x, two_ball], r_n / K_d))
    try:
        eK = gauge.eta(K_d)
        bound = 2.0 * eK * gauge.eta(3.0 * K_d) * gauge.eta(K_d ** 2 * r_m / r_n)
    except SamplingError as exc:
        rep.notes.append(str(exc))
        rep.vacuous = int(graph.level_vertices(m).size)
        return rep
    rep.ratio_bound = bound
    denom = _diam(T, two_ball)
    closed2 = _le(D[x], 2.0 * r_n)
    for u in graph.level_vertices(m):
        xp = graph.point[u]
        members = np.flatnonzero(_lt(D[xp], r_m))
        if not closed2[members].any():
            continue
        annulus = members[~_lt(D[xp, members], r_m / K_d)]
        if annulus.size == 0 or not outer_ok or denom <= 0.0:
            rep.vacuous += 1
            continue
        rep.checked += 1
        diam = _diam(T, members)
        tz = T[xp, annulus]
        lower = float(tz.max() / diam)
        upper = float(diam / (2.0 * eK * tz.min()))
        rep.worst_lower = max(rep.worst_lower, lower)
        rep.worst_upper = max(rep.worst_upper, upper)
        if lower > 1.0 + rel_tol or upper > 1.0 + rel_tol:
            rep.first_failures += 1
        ratio = diam / denom / bound
        rep.worst_ratio = max(rep.worst_ratio, ratio)
        if ratio > 1.0 + rel_tol:
            rep.ratio_failures += 1
    return rep


def gauge_report(gauge: GaugeMetric, graph: FillingGraph, ks, p: float, K_d: float,
                 vertices=None) -> dict:
    """Per-(v,k) diameter checks, feasibility of the scaled density, and decay slopes."""
    C = admissibility_constant(gauge, K_d, graph.tau)
    rows, slopes = [], {}
    vs = range(graph.n_vertices) if vertices is None else vertices
    for v in vs:
        v = int(v)
        usable = [k for k in ks if graph.level[v] + k <= graph.depth]
        for k in usable:
            two = ball_members(graph, v, 2.0)
            if _diam(gauge.theta.dist, two) <= 0.0:
                continue
            cmp_ = verify_diam_comparison(gauge, graph, v, k, K_d)
            feas = audit_scaled_density(gauge, graph, v, k, C)
            row = cmp_.to_json()
            row.update({"min_path_sum": feas.min_path_sum if math.isfinite(feas.min_path_sum) else None,
                        "feasible": feas.ok, "empty_family": feas.empty})
            rows.append(row)
        if len(usable) >= 2:
            _, slope = density_power_sums(gauge, graph, v, usable, p, C)
            slopes[v] = slope
    return {"constant": C, "K_d": K_d, "p": p, "pairs": rows,
            "decay_slopes": {str(v): s for v, s in slopes.items()},
            "all_ok": all(r["ok"] and r["feasible"] for r in rows)}
