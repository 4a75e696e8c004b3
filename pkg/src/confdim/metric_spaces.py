"""Finite metric spaces: generators, ingestion, normalization, structure constants."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateSpaceError, DomainError, SizeError

logger = logging.getLogger(__name__)

MAX_POINTS = 8192
KD_FLOOR = 2.0 + 1e-9
TRIANGLE_EXHAUSTIVE_MAX = 2000
REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PointCloudSpace:
    """Finite metric space held as a dense distance matrix.

    ``point_ids[i]`` labels row/column ``i`` of ``dist``.  Index order is the
    canonical (generation) order used by every downstream construction.
    """

    point_ids: tuple
    dist: np.ndarray
    label: str = ""

    def __post_init__(self):
        D = np.ascontiguousarray(self.dist, dtype=np.float64)
        D.setflags(write=False)
        object.__setattr__(self, "dist", D)
        object.__setattr__(self, "point_ids", tuple(self.point_ids))
        if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] != len(self.point_ids):
            raise ValueError("distance matrix shape does not match point ids")

    @property
    def n(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n > 1 else 0.0

    @property
    def min_gap(self) -> float:
        if self.n < 2:
            return 0.0
        off = self.dist[~np.eye(self.n, dtype=bool)]
        return float(off.min())

    def index_of(self, point_id) -> int:
        return self.point_ids.index(point_id)

    def normalized(self) -> "PointCloudSpace":
        return normalize(self)


def _check_size(n: int, cap: int | None = None) -> None:
    cap = MAX_POINTS if cap is None else cap
    if n > cap:
        raise SizeError(f"{n} points exceeds the point cap {cap}")


def normalize(space: PointCloudSpace) -> PointCloudSpace:
    """Rescale so the diameter is exactly 1/2.

    Dividing by ``2 * diam`` makes the maximal entry exactly 0.5 and a second
    call divides by 1.0, so the operation is bit-exactly idempotent.
    """
    if space.n < 2:
        return space
    dmax = space.dist.max()
    return PointCloudSpace(space.point_ids, space.dist / (2.0 * dmax), space.label)


def from_coords(coords, metric: str = "euclidean", ids=None, label: str = "",
                normalize_: bool = True) -> PointCloudSpace:
    X = np.asarray(coords, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    _check_size(X.shape[0])
    diff = X[:, None, :] - X[None, :, :]
    if metric == "euclidean":
        # scale by the largest coordinate gap so tiny separations don't underflow to 0
        m = np.abs(diff).max(axis=-1)
        safe = np.where(m > 0, m, 1.0)
        D = m * np.sqrt(((diff / safe[..., None]) ** 2).sum(axis=-1))
    elif metric == "sup":
        D = np.abs(diff).max(axis=-1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ids = list(range(X.shape[0])) if ids is None else list(ids)
    _check_separated(D, ids)
    space = PointCloudSpace(ids, D, label)
    if normalize_:
        space = normalize(space)
        _check_separated(space.dist, ids)
    return space


def _check_separated(D, ids) -> None:
    hit = np.argwhere(D + np.eye(D.shape[0]) == 0.0)
    if hit.size:
        i, j = hit[0]
        raise DegenerateSpaceError(f"points {ids[i]} and {ids[j]} are at distance 0 "
                                   "(coincident or closer than float resolution)")


def from_matrix(matrix, ids=None, label: str = "", normalize_: bool = True) -> PointCloudSpace:
    D = np.asarray(matrix, dtype=np.float64)
    _check_size(D.shape[0])
    ids = list(range(D.shape[0])) if ids is None else list(ids)
    space = PointCloudSpace(ids, D, label)
    return normalize(space) if normalize_ else space


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def generate_cantor(depth: int, ratio: float = 1.0 / 3.0) -> PointCloudSpace:
    """Left endpoints of the ``2**depth`` intervals of a central Cantor set."""
    if depth < 1:
        raise DomainError("depth must be >= 1")
    if not 0.0 < ratio < 0.5:
        raise DomainError("ratio must lie in (0, 1/2)")
    _check_size(2 ** depth)
    # left endpoints: sum_i b_i (1 - ratio) ratio^(i-1), b in {0,1}^depth
    steps = (1.0 - ratio) * ratio ** np.arange(depth)
    bits = np.array(list(itertools.product((0, 1), repeat=depth)), dtype=np.float64)
    pts = bits @ steps
    return from_coords(pts, "euclidean", label=f"cantor(depth={depth},ratio={ratio!r})")


def generate_carpet(depth: int) -> PointCloudSpace:
    """Centers of the retained cells of the level-``depth`` Sierpinski carpet (sup metric)."""
    if not 1 <= depth <= 5:
        raise DomainError("carpet depth must be in 1..5")
    _check_size(8 ** depth)
    cells = [(0, 0)]
    for _ in range(depth):
        cells = [(3 * i + a, 3 * j + b) for (i, j) in cells
                 for a in range(3) for b in range(3) if not (a == 1 and b == 1)]
    cells.sort()
    side = 3 ** depth
    coords = (np.array(cells, dtype=np.float64) + 0.5) / side
    return from_coords(coords, "sup", label=f"carpet(depth={depth})")


def generate_grid(n: int) -> PointCloudSpace:
    if n < 2:
        raise DomainError("grid needs n >= 2")
    _check_size(n)
    return from_coords(np.linspace(0.0, 1.0, n), "euclidean", label=f"grid(n={n})")


def snowflake(space: PointCloudSpace, exponent: float) -> PointCloudSpace:
    if not 0.0 < exponent <= 1.0:
        raise DomainError("snowflake exponent must lie in (0, 1]")
    if exponent == 1.0:
        return normalize(space)
    label = f"snowflake({space.label},{exponent!r})"
    return normalize(PointCloudSpace(space.point_ids, space.dist ** exponent, label))


# ---------------------------------------------------------------------------
# metric axioms
# ---------------------------------------------------------------------------

@dataclass
class MetricAudit:
    symmetric: bool
    zero_diagonal: bool
    positive: bool
    triangle_worst: float
    triangle_witness: tuple
    exhaustive: bool

    @property
    def ok(self) -> bool:
        return self.symmetric and self.zero_diagonal and self.positive and self.triangle_worst <= 0.0


def audit_metric(D: np.ndarray, rel_tol: float = REL_TOL, rng=None,
                 exhaustive_max: int = TRIANGLE_EXHAUSTIVE_MAX) -> MetricAudit:
    """Check the metric axioms on a distance matrix.

    The triangle inequality is checked over all triples for ``n <=
    exhaustive_max`` and on a random sample of third points beyond.  The
    reported worst slack is relative to the diameter and already has
    ``rel_tol`` subtracted (so ``<= 0`` means pass).
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    symmetric = bool(np.array_equal(D, D.T))
    zero_diag = bool(np.all(np.diag(D) == 0.0))
    off = D[~np.eye(n, dtype=bool)]
    positive = bool(np.all(off > 0.0)) if n > 1 else True
    scale = float(D.max()) if n > 1 and D.max() > 0 else 1.0
    if n <= exhaustive_max:
        worst, wit = _kernels.triangle_worst(D)
        exhaustive = True
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        ks = rng.choice(n, size=min(n, 200), replace=False)
        worst, wit = -np.inf, (-1, -1, -1)
        for k in ks:
            slack = D - (D[:, k][:, None] + D[k, :][None, :])
            flat = int(np.argmax(slack))
            if slack.flat[flat] > worst:
                worst, wit = float(slack.flat[flat]), (flat // n, flat % n, int(k))
        exhaustive = False
    worst = float(worst) / scale - rel_tol
    return MetricAudit(symmetric, zero_diag, positive, worst, tuple(int(w) for w in wit), exhaustive)


# ---------------------------------------------------------------------------
# structure constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureConstants:
    doubling_N: int
    K_d: float
    N2: int | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def N1(self) -> int:
        return self.doubling_N ** 6

    def with_N2(self, N2: int) -> "StructureConstants":
        if N2 < 1:
            raise ValueError("N2 must be >= 1")
        return replace(self, N2=int(N2))


def uniform_perfectness_constant(D: np.ndarray) -> tuple[float, tuple]:
    """Exact sup over radii of the smallest annulus constant, per center.

    For a center ``x`` with sorted distinct distances ``d_1 < d_2 < ...`` the
    annulus condition at radius ``r`` in ``(d_i, d_{i+1}]`` needs ``K >=
    r / d_i``; the supremum over that interval is ``d_{i+1}/d_i``.  Radii up
    to the nearest-neighbour distance of ``x`` lie below the resolution of the
    sample and impose nothing.
    """
    n = D.shape[0]
    if n < 3:
        return 0.0, (-1, -1)
    S = np.sort(D, axis=1)[:, 1:]
    ratios = S[:, 1:] / S[:, :-1]
    flat = int(np.argmax(ratios))
    i, j = divmod(flat, ratios.shape[1])
    return float(ratios[i, j]), (int(i), int(j))


def estimate_constants(space: PointCloudSpace, max_centers: int = 2048,
                       radii_per_octave: int = 4, seed: int = 0) -> StructureConstants:
    if space.n < 2:
        raise DegenerateSpaceError("constant estimation needs at least two points")
    D = space.dist
    n = space.n
    if n <= max_centers:
        centers = np.arange(n)
    else:
        centers = np.sort(np.random.default_rng(seed).choice(n, max_centers, replace=False))
    gap, diam = space.min_gap, space.diameter
    octaves = max(np.log2(diam / gap), 0.0)
    count = int(np.ceil(octaves * radii_per_octave)) + 1
    radii = gap * 2.0 ** (np.arange(count) / radii_per_octave)
    radii = np.unique(np.minimum(np.append(radii, diam), diam))
    counts = _kernels.doubling_counts(D, centers.astype(np.int64), radii)
    doubling_N = int(counts.max())
    kd_raw, wit = uniform_perfectness_constant(D[centers] if n > max_centers else D)
    K_d = max(KD_FLOOR, kd_raw)
    diag = {"K_d_raw": kd_raw, "K_d_witness": wit, "radii": int(radii.size),
            "centers": int(centers.size), "clamped": kd_raw < KD_FLOOR}
    logger.debug("estimate_constants %s: N=%d K_d=%.6g", space.label, doubling_N, K_d)
    return StructureConstants(doubling_N=doubling_N, K_d=K_d, diagnostics=diag)


# ---------------------------------------------------------------------------
# JSON ingestion / export
# ---------------------------------------------------------------------------

def space_to_json(space: PointCloudSpace) -> dict:
    return {"label": space.label, "points": list(space.point_ids),
            "matrix": [[float(x) for x in row] for row in space.dist]}


def space_from_json(doc: dict, normalize_: bool = True) -> PointCloudSpace:
    label = doc.get("label", "")
    if "matrix" in doc:
        return from_matrix(doc["matrix"], doc.get("points"), label, normalize_)
    if "coords" in doc:
        return from_coords(doc["coords"], doc.get("metric", "euclidean"), doc.get("points"),
                           label, normalize_)
    raise ValueError("space JSON needs either 'matrix' or 'coords'")


def save_space(space: PointCloudSpace, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(space_to_json(space), sort_keys=True) + "\n")
    return path


def load_space(path, normalize_: bool = True) -> PointCloudSpace:
    return space_from_json(json.loads(Path(path).read_text()), normalize_)
