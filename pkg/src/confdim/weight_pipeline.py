"""Vertex weights on a resampled filling graph.

The chain is sigma -> mu1 -> mu2 -> pi0 -> phi -> (omega) -> rho -> pi.
Each stage is a pure function of the previous ones plus the graph, so the
stages can be run and tested separately; :func:`run_pipeline` strings them
together and collects the diagnostics.

Two modes are supported.  ``theory`` derives epsilon and epsilon0 from the
structural constants and aborts on the first failed guarantee.  ``practical``
takes epsilon, epsilon0 from the caller (or uses measured defaults), rescales
densities whose modulus exceeds the budget, and records every check instead
of raising.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConstantsError, ConstructionError, ParameterError
from .modulus import ModulusCache, path_family, sample_paths, _shortest_length
from .nets_filling import Combinatorics, FillingGraph, attach_tree, n0_condition

logger = logging.getLogger(__name__)

NORM_TOL = 1e-9
RATIO_TOL = 1e-12
SIGMA_BUDGET = 0.5   # rescaled densities use this fraction of epsilon0
SCHEMA = "confdim.weights/1"


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def _log_pow(x: float, e: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.power(np.float64(x), e))


@dataclass(frozen=True)
class ConstantsRecord:
    p: float
    alpha: float
    tau: float
    K_d: float | None
    N1: int
    N2: int
    M: int
    epsilon: float
    epsilon0: float
    n0: int
    eta_minus: float
    eta_plus: float
    K: float
    K0: float
    K2: float
    mode: str

    @property
    def K1(self) -> float:
        """Lower-bound constant of the distance comparison, ``K0^6 (K0 + 1)``."""
        return _log_pow(self.K0, 6.0) * (self.K0 + 1.0)

    @property
    def rho_upper(self) -> float:
        return max(self.eta_plus, (1.0 - self.eta_minus ** self.p) ** (1.0 / self.p))

    def conditions(self) -> dict:
        """Theory-mode requirements with their truth values."""
        p, N1, N2 = self.p, self.N1, self.N2
        ok_n0, lo, hi = n0_condition(self.alpha, self.tau, self.n0)
        return {
            "epsilon": 2.0 ** (p + 2) * (N2 + N1 + 1) ** 2 * self.epsilon < 1.0,
            "epsilon0": N2 ** 2 * self.epsilon0 < self.epsilon,
            "eta_plus": self.eta_plus < 1.0,
            "n0": bool(ok_n0),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["K1"] = self.K1
        d["conditions"] = self.conditions()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConstantsRecord":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: d[k] for k in keys})


def theory_epsilon(p: float, N1: int, N2: int, margin: float = 0.5) -> float:
    return margin / (2.0 ** (p + 2) * (N2 + N1 + 1) ** 2)


def derived_constants(p, alpha, tau, K_d, N1, N2, M, n0, epsilon=None, epsilon0=None,
                      mode="practical") -> ConstantsRecord:
    """Fill in eta_minus, eta_plus, K, K0, K2 from (p, N1, N2, M, epsilon).

    Theory mode takes epsilon from the smallness bound (half of the allowed
    value) and epsilon0 = epsilon / (2 N2^2).  Practical mode uses the given
    values; its default replaces the doubling bound ``N1`` by the measured
    ``M`` in the same formula.
    """
    if mode not in ("theory", "practical"):
        raise ParameterError(f"unknown mode {mode!r}")
    if p < 1:
        raise ParameterError("p must be >= 1")
    M = max(int(M), 1)
    if mode == "theory":
        epsilon = theory_epsilon(p, N1, N2)
        epsilon0 = 0.5 * epsilon / N2 ** 2
    else:
        if epsilon is None:
            epsilon = theory_epsilon(p, M, N2)
        if epsilon0 is None:
            epsilon0 = 0.5 * epsilon / N2 ** 2
    if not (epsilon > 0 and epsilon0 > 0):
        raise ParameterError("epsilon and epsilon0 must be positive")
    q = 1.0 / p
    eta_minus = (epsilon / M) ** q
    eta_plus = 2.0 ** (1.0 + q) * (N2 + 1) ** q * epsilon ** q
    base = max(1.0 / eta_minus,
               (1.0 / eta_minus) * max(eta_minus ** -p - 1.0, 0.0) ** q,
               eta_plus / eta_minus ** 2)
    K0 = base * base
    K2 = (N2 + 1) * _log_pow(K0, p)
    rec = ConstantsRecord(float(p), float(alpha), float(tau), None if K_d is None else float(K_d),
                          int(N1), int(N2), M, float(epsilon), float(epsilon0), int(n0),
                          float(eta_minus), float(eta_plus), float(1.0 / eta_minus),
                          float(K0), float(K2), mode)
    if mode == "theory":
        bad = [k for k, ok in rec.conditions().items() if not ok]
        if bad:
            raise ConstantsError(f"theory-mode constants fail: {', '.join(bad)}")
    return rec


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    ok: bool
    value: float | None = None
    bound: float | None = None
    witness: object = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "ok": bool(self.ok), "value": _num(self.value),
                "bound": _num(self.bound), "witness": self.witness, "detail": self.detail}


def _num(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else ("-inf" if x < 0 else "nan")


class Recorder:
    """Collects checks; raises on failure in theory mode."""

    def __init__(self, mode: str):
        self.mode = mode
        self.checks: list[Check] = []

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        if not check.ok and self.mode == "theory":
            raise ConstructionError(f"{check.name} failed at {check.witness}: {check.detail}")
        return check

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]


def _worst(values: np.ndarray, ids: np.ndarray, worst_is_max: bool = True):
    if values.size == 0:
        return None, None
    i = int(np.argmax(values) if worst_is_max else np.argmin(values))
    return float(values[i]), ids[i]


# ---------------------------------------------------------------------------
# sigma
# ---------------------------------------------------------------------------

@dataclass
class SigmaResult:
    sigma: np.ndarray
    per_vertex: list          # dicts: vertex, modulus, scale, min_sum, status
    paths: dict               # base vertex -> list of global-id paths (active + sampled)


def build_sigma(graph: FillingGraph, p: float, eps0: float, mode: str = "practical",
                rescale: bool = True, cache: ModulusCache | None = None,
                n_random: int = 1000, seed: int = 0, recorder: Recorder | None = None) -> SigmaResult:
    """Pointwise max of per-vertex optimal densities on the ``k = 1`` families.

    In theory mode every modulus must be below ``eps0``.  In practical mode a
    density whose modulus is at least ``eps0`` is scaled by
    ``(SIGMA_BUDGET * eps0 / Mod)^(1/p)`` when ``rescale`` is set; the scale
    factor is the admissibility level actually achieved and is recorded.
    """
    rec = recorder or Recorder(mode)
    cache = ModulusCache() if cache is None else cache
    rng = np.random.default_rng(seed)
    n = graph.n_vertices
    sigma = np.zeros(n)
    per_vertex, families = [], []
    for v in range(n):
        if graph.level[v] + 1 > graph.depth:
            break
        fam = path_family(graph, v, 1)
        res = cache.solve(fam, p)
        dens = res.sigma_on_nodes()
        scale = 1.0
        if res.value >= eps0:
            if mode == "theory":
                raise ConstantsError(
                    f"modulus {res.value:.6g} of the family at vertex {v} is not below "
                    f"epsilon0={eps0:.6g}; a larger n0 is needed")
            if rescale and res.value > 0:
                scale = (SIGMA_BUDGET * eps0 / res.value) ** (1.0 / p)
                dens = dens * scale
        np.maximum.at(sigma, fam.nodes, dens)
        per_vertex.append({"vertex": int(v), "modulus": float(res.value), "scale": float(scale),
                           "status": res.status, "paths": len(res.active_paths)})
        families.append((v, fam, res, scale))
    # admissibility of the combined density on every family, by shortest path
    paths: dict[int, list] = {}
    nonempty = [f for f in families if f[2].status != "empty_family"]
    per_family = int(math.ceil(n_random / max(len(nonempty), 1)))
    worst_gap, worst_v = 0.0, None
    by_v = {row["vertex"]: row for row in per_vertex}
    for v, fam, res, scale in families:
        row = by_v[v]
        if res.status == "empty_family":
            row["min_sum"] = None
            paths[int(v)] = []
            continue
        local = sigma[fam.nodes]
        local = np.where(fam.universe, local, 0.0)
        low = _shortest_length(fam, local)
        row["min_sum"] = float(low)
        gap = scale * (1.0 - 1e-6) - low
        if gap > worst_gap:
            worst_gap, worst_v = gap, int(v)
        sampled = sample_paths(fam, per_family, rng)
        glob = [tuple(int(fam.nodes[i]) for i in pth) for pth in list(res.active_paths) + sampled]
        paths[int(v)] = glob
    rec.add(Check("sigma_admissible", worst_gap <= 0.0, worst_gap, 0.0, worst_v,
                  "shortest family path sum minus the recorded admissibility level"))
    big = [r for r in per_vertex if r["modulus"] >= eps0]
    rec.add(Check("sigma_modulus_below_eps0", not big,
                  max((r["modulus"] for r in per_vertex), default=0.0), eps0,
                  big[0]["vertex"] if big else None,
                  f"{len(big)} families at or above epsilon0"))
    return SigmaResult(sigma, per_vertex, paths)


# ---------------------------------------------------------------------------
# mu1, mu2, pi0, phi, omega, rho, pi
# ---------------------------------------------------------------------------

def lift_mu1(sigma: np.ndarray, eta_minus: float, p: float) -> np.ndarray:
    return (np.asarray(sigma) ** p + eta_minus ** p) ** (1.0 / p)


def lift_mu2(mu1: np.ndarray, comb: Combinatorics) -> np.ndarray:
    return np.array([2.0 * mu1[comb.S(v)].max() for v in range(mu1.size)])


def _h_pairs(graph):
    rows = np.repeat(np.arange(graph.n_vertices), np.diff(graph.h_indptr))
    return rows, graph.h_indices


@dataclass
class Pi0Result:
    pi0: np.ndarray
    pi1: np.ndarray
    oriented: np.ndarray      # (m, 2) tail -> head
    inbound: np.ndarray       # bool per vertex
    both_ways: list           # vertices with inbound and outbound oriented edges


def inductive_pi0(mu2: np.ndarray, graph: FillingGraph, K: float) -> Pi0Result:
    """Level-by-level normalisation of ``mu2`` products so neighbours stay within ``K``."""
    if not K > 1:
        raise ParameterError("K must exceed 1")
    n = graph.n_vertices
    par = graph.tree_parent
    pi0 = np.zeros(n)
    pi1 = np.zeros(n)
    pi0[graph.root] = pi1[graph.root] = 1.0
    rows, cols = _h_pairs(graph)
    inbound = np.zeros(n, dtype=np.bool_)
    oriented = []
    for k in range(1, graph.depth + 1):
        vs = graph.level_vertices(k)
        pi1[vs] = mu2[vs] * pi0[par[vs]]
        sel = (rows >= vs[0]) & (rows <= vs[-1])
        r, c = rows[sel], cols[sel]
        hit = pi1[r] > K * pi1[c]
        oriented.append(np.stack([r[hit], c[hit]], axis=1))
        inbound[c[hit]] = True
        nbmax = np.zeros(n)
        np.maximum.at(nbmax, r, pi1[c])
        pi0[vs] = np.where(inbound[vs], nbmax[vs] / K, pi1[vs])
    oriented = np.concatenate(oriented) if oriented else np.zeros((0, 2), dtype=np.int64)
    outbound = np.zeros(n, dtype=np.bool_)
    outbound[oriented[:, 0]] = True
    both = [int(v) for v in np.flatnonzero(inbound & outbound)]
    return Pi0Result(pi0, pi1, oriented.astype(np.int64), inbound, both)


def check_pi0(res: Pi0Result, graph: FillingGraph, K: float, rec: Recorder) -> None:
    pi0 = res.pi0
    rows, cols = _h_pairs(graph)
    ratio = pi0[rows] / pi0[cols]
    val, wit = _worst(ratio, np.stack([rows, cols], axis=1))
    rec.add(Check("pi0_horizontal_ratio", bool(ratio.size == 0 or val <= K * (1 + RATIO_TOL)), val, K,
                  None if wit is None else [int(x) for x in wit]))
    par = graph.tree_parent
    kids = np.flatnonzero(par >= 0)
    up = pi0[par[kids]] / pi0[kids]
    hi, w_hi = _worst(up, kids)
    lo, w_lo = _worst(up, kids, worst_is_max=False)
    ok = kids.size == 0 or (lo >= 1.0 - RATIO_TOL and hi <= K * (1 + RATIO_TOL))
    rec.add(Check("pi0_parent_ratio", bool(ok), hi, K,
                  None if kids.size == 0 else int(w_hi if hi > K * (1 + RATIO_TOL) else w_lo),
                  f"min ratio {lo}"))
    rec.add(Check("orientation_one_way", not res.both_ways, float(len(res.both_ways)), 0.0,
                  res.both_ways[0] if res.both_ways else None,
                  "vertices with both inbound and outbound oriented edges"))


def derive_phi(pi0: np.ndarray, graph: FillingGraph) -> np.ndarray:
    par = graph.tree_parent
    phi = np.ones_like(pi0)
    kids = np.flatnonzero(par >= 0)
    phi[kids] = pi0[kids] / pi0[par[kids]]
    return phi


def tree_product(factors: np.ndarray, graph: FillingGraph) -> np.ndarray:
    """Top-down product of ``factors`` along tree ancestry (root gets 1)."""
    out = np.ones_like(factors)
    par = graph.tree_parent
    for k in range(1, graph.depth + 1):
        vs = graph.level_vertices(k)
        out[vs] = out[par[vs]] * factors[vs]
    return out


def check_phi(phi, pi0, mu2, graph, const: ConstantsRecord, rec: Recorder) -> None:
    kids = np.flatnonzero(graph.tree_parent >= 0)
    f = phi[kids]
    lo, wlo = _worst(f, kids, worst_is_max=False)
    hi, whi = _worst(f, kids)
    ok_lo = kids.size == 0 or lo >= const.eta_minus * (1 - RATIO_TOL)
    ok_hi = kids.size == 0 or hi <= const.eta_plus * (1 + RATIO_TOL)
    rec.add(Check("phi_lower", bool(ok_lo), lo, const.eta_minus, None if wlo is None else int(wlo)))
    rec.add(Check("phi_upper", bool(ok_hi), hi, const.eta_plus, None if whi is None else int(whi)))
    short = mu2[kids] - f
    val, wit = _worst(short / np.maximum(mu2[kids], 1e-300), kids)
    rec.add(Check("phi_ge_mu2", bool(kids.size == 0 or val <= RATIO_TOL), val, 0.0,
                  None if wit is None else int(wit)))
    prod = tree_product(phi, graph)
    err = np.abs(prod - pi0) / pi0
    val, wit = _worst(err, np.arange(err.size))
    rec.add(Check("phi_product", bool(val <= 1e-12), val, 1e-12, int(wit)))


@dataclass
class OmegaRho:
    omega: np.ndarray         # nan where a vertex has no children
    rho: np.ndarray
    w_v: np.ndarray           # -1 at the deepest level
    single_child: list


def compute_omega_rho(phi: np.ndarray, comb: Combinatorics, p: float) -> OmegaRho:
    """Scale ``phi`` at each direct descendant so children carry unit ``p``-mass."""
    g = comb.graph
    n = phi.size
    omega = np.full(n, np.nan)
    rho = phi.copy()
    rho[g.root] = 1.0
    wv_all = np.full(n, -1, dtype=np.int64)
    single = []
    for v in range(n):
        if g.level[v] >= g.depth:
            continue
        ch = comb.tree_children(v)
        wv = comb.w_v(v)
        wv_all[v] = wv
        if wv not in ch:
            raise ConstructionError(f"direct descendant {wv} of {v} is not a tree child")
        others = ch[ch != wv]
        s_oth = float(np.sum(phi[others] ** p))
        total = s_oth + float(phi[wv] ** p)
        if not total < 1.0:
            raise ConstantsError(
                f"children of vertex {v} carry phi^p mass {total:.6g} >= 1; epsilon is too large")
        if others.size == 0:
            single.append(int(v))
        r = (1.0 - s_oth) ** (1.0 / p)
        omega[v] = r / phi[wv]
        rho[wv] = r
    return OmegaRho(omega, rho, wv_all, single)


def accumulate_pi(rho: np.ndarray, graph: FillingGraph) -> np.ndarray:
    return tree_product(rho, graph)


def si_min(values: np.ndarray, graph) -> np.ndarray:
    """``min`` of ``values`` over ``{v} U`` horizontal neighbours of ``v``."""
    out = values.copy()
    rows = np.repeat(np.arange(values.size), np.diff(graph.h_indptr))
    np.minimum.at(out, rows, values[graph.h_indices])
    return out


# ---------------------------------------------------------------------------
# weight system
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class WeightSystem:
    """Weights on ``G[n0]`` together with the graph skeleton they live on."""

    constants: ConstantsRecord
    point_ids: list
    point: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    h_indptr: np.ndarray
    h_indices: np.ndarray
    d_indptr: np.ndarray
    d_indices: np.ndarray
    sigma: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    pi1: np.ndarray
    pi0: np.ndarray
    phi: np.ndarray
    omega: np.ndarray
    rho: np.ndarray
    pi: np.ndarray
    w_v: np.ndarray
    family_paths: dict = field(default_factory=dict)
    sigma_report: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    # graph-like accessors shared with FillingGraph
    @property
    def n_vertices(self) -> int:
        return self.point.size

    @property
    def root(self) -> int:
        return 0

    @property
    def tree_parent(self) -> np.ndarray:
        return self.parent

    @cached_property
    def level_start(self) -> np.ndarray:
        counts = np.bincount(self.level, minlength=int(self.level.max()) + 1)
        return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def depth(self) -> int:
        return int(self.level.max()) if self.level.size else 0

    def level_vertices(self, k: int) -> np.ndarray:
        return np.arange(self.level_start[k], self.level_start[k + 1])

    def h_neighbors(self, v: int) -> np.ndarray:
        return self.h_indices[self.h_indptr[v]:self.h_indptr[v + 1]]

    def children(self, v: int) -> np.ndarray:
        return self.d_indices[self.d_indptr[v]:self.d_indptr[v + 1]]

    @cached_property
    def _tree_csr(self):
        par = self.parent
        kids = np.flatnonzero(par >= 0)
        order = kids[np.lexsort((kids, par[kids]))]
        indptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
        np.add.at(indptr, par[order] + 1, 1)
        return np.cumsum(indptr), order

    def tree_children(self, v: int) -> np.ndarray:
        indptr, idx = self._tree_csr
        return idx[indptr[v]:indptr[v + 1]]

    @property
    def pi_star(self) -> np.ndarray:
        return si_min(self.pi, self)

    @property
    def rho_star(self) -> np.ndarray:
        return si_min(self.rho, self)

    def label(self, v: int) -> list:
        return [self.point_ids[self.point[v]], int(self.level[v])]

    def copy_with(self, **arrays) -> "WeightSystem":
        """Shallow copy with some arrays replaced (used for fault injection)."""
        from dataclasses import replace
        return replace(self, **arrays)

    # -- serialisation -----------------------------------------------------

    _ARRAYS = ("sigma", "mu1", "mu2", "pi1", "pi0", "phi", "omega", "rho", "pi")

    def to_json(self) -> dict:
        vertices = []
        for v in range(self.n_vertices):
            row = {"id": int(v), "point": int(self.point[v]), "level": int(self.level[v]),
                   "parent": int(self.parent[v]), "w_v": int(self.w_v[v]),
                   "h": [int(u) for u in self.h_neighbors(v)],
                   "down": [int(u) for u in self.children(v)]}
            for name in self._ARRAYS:
                row[name] = _num(getattr(self, name)[v])
            vertices.append(row)
        fam = {str(k): [list(p) for p in v] for k, v in sorted(self.family_paths.items())}
        return {"schema": SCHEMA, "config": self.config, "constants": self.constants.to_dict(),
                "point_ids": list(self.point_ids), "vertices": vertices,
                "family_paths": fam, "sigma_report": self.sigma_report,
                "checks": self.checks}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, doc: dict) -> "WeightSystem":
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unexpected schema {doc.get('schema')!r}")
        vs = doc["vertices"]

        def arr(name, dtype=np.float64):
            return np.array([float(r[name]) if dtype is np.float64 else r[name] for r in vs],
                            dtype=dtype)

        def csr(key):
            lens = [len(r[key]) for r in vs]
            indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
            flat = [u for r in vs for u in r[key]]
            return indptr, np.asarray(flat, dtype=np.int64)

        h_indptr, h_indices = csr("h")
        d_indptr, d_indices = csr("down")
        arrays = {name: arr(name) for name in cls._ARRAYS}
        fam = {int(k): [tuple(p) for p in v] for k, v in doc.get("family_paths", {}).items()}
        return cls(ConstantsRecord.from_dict(doc["constants"]), list(doc["point_ids"]),
                   arr("point", np.int64), arr("level", np.int64), arr("parent", np.int64),
                   h_indptr, h_indices, d_indptr, d_indices, w_v=arr("w_v", np.int64),
                   family_paths=fam, sigma_report=doc.get("sigma_report", []),
                   checks=doc.get("checks", []), config=doc.get("config", {}), **arrays)

    @classmethod
    def loads(cls, text: str) -> "WeightSystem":
        return cls.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _sum_over(values_p: np.ndarray, sets) -> np.ndarray:
    return np.array([values_p[s].sum() for s in sets])


def run_pipeline(graph: FillingGraph, p: float, mode: str = "practical", *, N1: int | None = None,
                 K_d: float | None = None, epsilon: float | None = None,
                 epsilon0: float | None = None, rescale: bool = True, seed: int = 0,
                 n_random: int = 1000, cache: ModulusCache | None = None,
                 config: dict | None = None) -> WeightSystem:
    """Run every stage on ``graph`` (a resampled filling ``G[n0]``)."""
    if graph.tree_parent is None:
        graph = attach_tree(graph)
    comb = Combinatorics(graph)
    M = comb.M
    N2 = graph.N2
    if N1 is None:
        N1 = M
    const = derived_constants(p, graph.alpha, graph.tau, K_d, N1, N2, M, graph.step,
                              epsilon, epsilon0, mode)
    rec = Recorder(mode)
    for name, ok in const.conditions().items():
        rec.add(Check(f"constants_{name}", bool(ok), detail="theory-mode requirement"))

    sig = build_sigma(graph, p, const.epsilon0, mode, rescale, cache, n_random, seed, rec)
    sigma = sig.sigma
    n = graph.n_vertices
    nonleaf = [v for v in range(n) if graph.level[v] < graph.depth]
    Tsets = [comb.T(v) for v in nonleaf]
    ids = np.asarray(nonleaf, dtype=np.int64)

    val, wit = _worst(_sum_over(sigma ** p, Tsets), ids)
    rec.add(Check("sigma_T_sum", val is None or val < N2 * const.epsilon0, val, N2 * const.epsilon0,
                  None if wit is None else int(wit)))

    mu1 = lift_mu1(sigma, const.eta_minus, p)
    val, wit = _worst(_sum_over(mu1 ** p, Tsets), ids)
    rec.add(Check("mu1_T_sum", val is None or val < 2 * const.epsilon, val, 2 * const.epsilon,
                  None if wit is None else int(wit)))
    mu2 = lift_mu2(mu1, comb)
    bound = 2.0 ** (p + 1) * const.epsilon * (N2 + 1)
    val, wit = _worst(_sum_over(mu2 ** p, Tsets), ids)
    rec.add(Check("mu2_T_sum", val is None or val <= bound, val, bound,
                  None if wit is None else int(wit)))

    p0 = inductive_pi0(mu2, graph, const.K)
    check_pi0(p0, graph, const.K, rec)
    phi = derive_phi(p0.pi0, graph)
    check_phi(phi, p0.pi0, mu2, graph, const, rec)

    orho = compute_omega_rho(phi, comb, p)
    rho = orho.rho
    rec.add(Check("uniformly_perfect_children", not orho.single_child, float(len(orho.single_child)),
                  0.0, orho.single_child[0] if orho.single_child else None,
                  "vertices whose only tree child is the direct descendant"))
    om = orho.omega[np.isfinite(orho.omega)]
    om_ids = np.flatnonzero(np.isfinite(orho.omega))
    val, wit = _worst(om, om_ids, worst_is_max=False)
    rec.add(Check("omega_gt_one", val is None or val > 1.0, val, 1.0, None if wit is None else int(wit)))
    wvs = orho.w_v[orho.w_v >= 0]
    up = (1.0 - const.eta_minus ** p) ** (1.0 / p)
    lo_ok = np.all(rho[wvs] >= const.eta_minus * (1 - RATIO_TOL))
    hi_v, hi_w = _worst(rho[wvs], wvs)
    rec.add(Check("rho_wv_bounds", bool(lo_ok and (hi_v is None or hi_v <= up * (1 + RATIO_TOL))),
                  hi_v, up, None if hi_w is None else int(hi_w)))
    chain = np.maximum.reduce([mu1 - mu2 / 2, mu2 - phi, phi - rho])
    chain[graph.root] = -np.inf
    val, wit = _worst(chain / np.maximum(mu2, 1e-300), np.arange(n))
    rec.add(Check("mu_phi_rho_chain", bool(val <= RATIO_TOL), val, 0.0, int(wit)))

    pi = accumulate_pi(rho, graph)
    ws = WeightSystem(const, list(graph.space.point_ids), graph.point.copy(), graph.level.copy(),
                      graph.tree_parent.copy(), graph.h_indptr, graph.h_indices,
                      graph.d_indptr, graph.d_indices, sigma, mu1, mu2, p0.pi1, p0.pi0, phi,
                      orho.omega, rho, pi, orho.w_v, sig.paths, sig.per_vertex, [],
                      dict(config or {}))
    # mu2 relation on the family paths: sum of consecutive minima
    worst, wit = math.inf, None
    rho_star = ws.rho_star
    level_req = {r["vertex"]: r["scale"] for r in sig.per_vertex}
    for v, paths in sig.paths.items():
        for pth in paths:
            a = np.asarray(pth)
            s = float(np.minimum(rho_star[a[:-1]], rho_star[a[1:]]).sum()) if a.size > 1 else 0.0
            rel = s / level_req[v]
            if rel < worst:
                worst, wit = rel, [int(v), [int(x) for x in pth]]
    if wit is not None:
        rec.add(Check("H3prime_rho", worst >= 1.0 - 1e-9, worst, 1.0, wit,
                      "minimum over family paths of sum min(rho*, rho*) relative to the density level"))
    ws.checks = [c.to_dict() for c in rec.checks]
    logger.info("pipeline done: %d checks, %d failed", len(rec.checks), len(rec.failed()))
    return ws
