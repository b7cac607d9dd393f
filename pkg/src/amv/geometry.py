"""Model metric measure spaces, quadrature samples and exact metric balls.

Supported spaces:

* ``FlatTorusLinf`` / ``FlatTorusEuclid``: the quotient R^m / (-1 + 2Z)^m with
  fundamental domain [-1, 1)^m, the sup-norm (resp. Euclidean) quotient
  distance and the Haar measure normalised to total mass 1.
* ``Hypercube``: [0, b]^m with the sup-norm distance and Lebesgue measure.
  ``Interval`` is the one-dimensional case [0, L].
* ``Sphere2``: the unit sphere in R^3 with geodesic distance and surface
  measure (total 4 pi). Points are stored as ambient unit vectors.
* ``CustomCloud``: user-supplied points and weights, ambient Euclidean
  distance, no closed-form ball volumes.

Balls are open: ``y`` belongs to the ball of radius ``r`` about ``x`` iff
``distance(x, y) < r`` (with exact ties on a lattice kept out, see
``TIE_RTOL``), evaluated by one vectorised routine everywhere so that tree
queries and brute-force scans agree exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError, UnsupportedError

TORUS_PERIOD = 2.0


class SpaceKind(str, enum.Enum):
    FLAT_TORUS_LINF = "FlatTorusLinf"
    FLAT_TORUS_EUCLID = "FlatTorusEuclid"
    HYPERCUBE = "Hypercube"
    INTERVAL = "Interval"
    SPHERE2 = "Sphere2"
    CUSTOM_CLOUD = "CustomCloud"


TORI = (SpaceKind.FLAT_TORUS_LINF, SpaceKind.FLAT_TORUS_EUCLID)
SUP_NORM_SPACES = (SpaceKind.FLAT_TORUS_LINF, SpaceKind.HYPERCUBE, SpaceKind.INTERVAL)
# Distances within this relative margin of r count as ties and fall outside the
# open ball. Without it, lattice points at distance exactly r land on either side
# depending on rounding, and grid balls lose their mirror symmetry.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: SpaceKind
    m: int
    side: float = 1.0
    total_measure: float = 1.0
    has_boundary: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if int(self.m) != self.m or self.m < 1:
            raise InvalidInputError(f"dimension must be a positive integer, got {self.m!r}")
        if not self.side > 0 or not self.total_measure > 0:
            raise InvalidInputError("side and total_measure must be positive")
        k = self.kind
        if k in TORI and (self.total_measure != 1.0 or self.has_boundary):
            raise InvalidInputError("flat torus has unit measure and no boundary")
        if k is SpaceKind.HYPERCUBE:
            if not math.isclose(self.total_measure, self.side**self.m, rel_tol=1e-14):
                raise InvalidInputError("hypercube measure must equal side**m")
            if not self.has_boundary:
                raise InvalidInputError("hypercube has a boundary")
        if k is SpaceKind.INTERVAL and (
            self.m != 1 or self.total_measure != self.side or not self.has_boundary
        ):
            raise InvalidInputError("interval is a one-dimensional hypercube")
        if k is SpaceKind.SPHERE2 and (
            self.m != 2 or self.total_measure != 4 * math.pi or self.has_boundary
        ):
            raise InvalidInputError("Sphere2 is the unit 2-sphere with measure 4*pi")

    @property
    def ambient_dim(self) -> int:
        """Number of stored coordinates per point."""
        return 3 if self.kind is SpaceKind.SPHERE2 else self.m

    @property
    def diameter(self) -> float:
        if self.kind is SpaceKind.FLAT_TORUS_LINF:
            return 1.0
        if self.kind is SpaceKind.FLAT_TORUS_EUCLID:
            return math.sqrt(self.m)
        if self.kind in (SpaceKind.HYPERCUBE, SpaceKind.INTERVAL):
            return self.side
        if self.kind is SpaceKind.SPHERE2:
            return math.pi
        return math.inf

    @property
    def max_radius(self) -> float:
        """Exclusive upper bound on ball radii accepted by :func:`ball_index`."""
        if self.kind in TORI:
            # balls must embed in the fundamental domain
            return 1.0
        return self.diameter

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "m": self.m,
            "side": self.side,
            "total_measure": self.total_measure,
            "has_boundary": self.has_boundary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceDescriptor":
        return cls(
            SpaceKind(d["kind"]),
            int(d["m"]),
            float(d.get("side", 1.0)),
            float(d["total_measure"]),
            bool(d["has_boundary"]),
        )


def flat_torus(m: int, metric: str = "linf") -> SpaceDescriptor:
    kinds = {"linf": SpaceKind.FLAT_TORUS_LINF, "euclid": SpaceKind.FLAT_TORUS_EUCLID}
    if metric not in kinds:
        raise InvalidInputError(f"unknown torus metric {metric!r}")
    return SpaceDescriptor(kinds[metric], m)


def hypercube(m: int, b: float = 1.0) -> SpaceDescriptor:
    return SpaceDescriptor(SpaceKind.HYPERCUBE, m, b, b**m, True)


def interval(length: float = 1.0) -> SpaceDescriptor:
    return SpaceDescriptor(SpaceKind.INTERVAL, 1, length, length, True)


def sphere2() -> SpaceDescriptor:
    return SpaceDescriptor(SpaceKind.SPHERE2, 2, 1.0, 4 * math.pi, False)


def custom_cloud(dim: int, total_measure: float) -> SpaceDescriptor:
    return SpaceDescriptor(SpaceKind.CUSTOM_CLOUD, dim, 1.0, total_measure, False)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Quadrature discretisation of the measure: ``weights[i]`` is the mass at ``points[i]``."""

    space: SpaceDescriptor
    points: np.ndarray
    weights: np.ndarray
    strategy: str
    seed: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if pts.ndim != 2 or pts.shape[1] != self.space.ambient_dim:
            raise InvalidInputError(
                f"points must have {self.space.ambient_dim} coordinates, got shape {pts.shape}"
            )
        if self.weights.shape != (pts.shape[0],):
            raise InvalidInputError("one weight per point required")
        if not np.all(self.weights > 0):
            raise InvalidInputError("weights must be positive")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class BallIndex:
    """Open-ball adjacency in CSR layout.

    ``indices[indptr[i]:indptr[i+1]]`` is the sorted list of ``j`` with
    ``d(x_i, x_j) < r``.
    """

    r: float
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def rows(self) -> np.ndarray:
        """Row index of every stored entry, aligned with ``indices``."""
        return np.repeat(np.arange(self.n), np.diff(self.indptr))

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def same_as(self, other: "BallIndex") -> bool:
        return (
            self.r == other.r
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


@dataclass(frozen=True, eq=False)
class VolumeField:
    mode: str
    values: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if not np.all(self.values > 0):
            raise InvalidInputError("ball volumes must be positive")


# ---------------------------------------------------------------------------
# distances


def distances(space: SpaceDescriptor, X, Y) -> np.ndarray:
    """Row-wise distances ``d(X[i], Y[i])`` (arrays broadcast against each other)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    dim = space.ambient_dim
    if X.shape[-1] != dim or Y.shape[-1] != dim:
        raise InvalidInputError(
            f"{space.kind.value} points have {dim} coordinates, got {X.shape[-1]} and {Y.shape[-1]}"
        )
    kind = space.kind
    if kind is SpaceKind.SPHERE2:
        # atan2 form: exact zero for equal points, no precision loss near 0 or pi
        dot = np.sum(X * Y, axis=-1)
        cross = np.linalg.norm(np.cross(X, Y), axis=-1)
        return np.arctan2(cross, dot)
    delta = np.abs(X - Y)
    if kind in TORI:
        # minimum over the 3^m lattice translates; the norms are coordinatewise
        # monotone so the minimum can be taken one coordinate at a time
        delta = np.minimum(delta, TORUS_PERIOD - delta)
    if kind in SUP_NORM_SPACES:
        return delta.max(axis=-1)
    return np.sqrt(np.sum(delta * delta, axis=-1))


def distance(space: SpaceDescriptor, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.ndim != 1 or y.ndim != 1:
        raise InvalidInputError("distance expects two single points")
    return float(distances(space, x, y))


def wrap_torus(points) -> np.ndarray:
    """Map coordinates into the fundamental domain [-1, 1)."""
    p = np.mod(np.asarray(points, dtype=float) + 1.0, TORUS_PERIOD) - 1.0
    p[p >= 1.0] = -1.0
    return p


# ---------------------------------------------------------------------------
# sampling


def _grid_side(n: int, m: int) -> int:
    k = int(round(n ** (1.0 / m)))
    for cand in (k - 1, k, k + 1):
        if cand >= 1 and cand**m == n:
            return cand
    raise InvalidInputError(f"grid sampling needs n = k**{m}, got n = {n}")


def _lattice(k: int, m: int, coords_1d: np.ndarray) -> np.ndarray:
    idx = np.indices((k,) * m).reshape(m, -1).T
    return coords_1d[idx]


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    golden_angle = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden_angle * i
    s = np.sqrt(1.0 - z * z)
    pts = np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sample(space: SpaceDescriptor, n: int, strategy: str = "grid", seed: int = 0) -> SampleSet:
    """Equal-weight quadrature of the space's measure with ``n`` points.

    ``grid`` is a tensor lattice (n must be a perfect m-th power): lattice
    corners -1 + 2i/k on the torus, cell midpoints on the hypercube.
    ``iid`` draws uniform points from ``numpy.random.default_rng(seed)``.
    ``fibonacci`` is the spherical Fibonacci lattice and only exists on Sphere2.
    """
    if int(n) != n or n < 2:
        raise InvalidInputError(f"need at least two sample points, got {n!r}")
    n = int(n)
    kind, m = space.kind, space.m
    if kind is SpaceKind.CUSTOM_CLOUD:
        raise UnsupportedError("CustomCloud samples are loaded from file, not generated")
    if strategy == "fibonacci":
        if kind is not SpaceKind.SPHERE2:
            raise UnsupportedError("fibonacci sampling is only defined on Sphere2")
        pts = fibonacci_sphere(n)
    elif strategy == "grid":
        if kind is SpaceKind.SPHERE2:
            raise UnsupportedError("no equal-weight grid on Sphere2; use fibonacci or iid")
        k = _grid_side(n, m)
        if kind in TORI:
            h = TORUS_PERIOD / k
            coords = -1.0 + h * np.arange(k)
        else:
            h = space.side / k
            coords = (np.arange(k) + 0.5) * h
        pts = _lattice(k, m, coords)
    elif strategy == "iid":
        rng = np.random.default_rng(seed)
        if kind is SpaceKind.SPHERE2:
            g = rng.standard_normal((n, 3))
            pts = g / np.linalg.norm(g, axis=1, keepdims=True)
        elif kind in TORI:
            pts = wrap_torus(rng.uniform(-1.0, 1.0, size=(n, m)))
        else:
            pts = rng.uniform(0.0, space.side, size=(n, m))
    else:
        raise UnsupportedError(f"unknown sampling strategy {strategy!r}")
    weights = np.full(n, space.total_measure / n)
    return SampleSet(space, pts, weights, strategy, int(seed))


def from_points(points, weights) -> SampleSet:
    """Wrap a user point cloud (ambient Euclidean metric) as a SampleSet."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=float)
    if not np.all(w > 0):
        raise InvalidInputError("weights must be positive")
    return SampleSet(custom_cloud(pts.shape[1], float(np.sum(w))), pts, w, "file", 0)


# ---------------------------------------------------------------------------
# balls


def _check_radius(space: SpaceDescriptor, r: float) -> float:
    r = float(r)
    if not r > 0 or not math.isfinite(r):
        raise InvalidInputError(f"radius must be positive, got {r}")
    if r >= space.max_radius:
        raise InvalidInputError(
            f"radius {r} is not below the admissible bound {space.max_radius} for {space.kind.value}"
        )
    return r


def _custom_radius_bound(samples: SampleSet) -> float:
    span = np.ptp(samples.points, axis=0)
    return float(np.sqrt(np.sum(span * span)))


def _tree_candidates(samples: SampleSet, r: float) -> tuple[np.ndarray, np.ndarray]:
    space = samples.space
    pts = samples.points
    slack = r * 1e-9 + 1e-12
    if space.kind is SpaceKind.SPHERE2:
        p, radius, data, box = 2.0, 2.0 * math.sin(min(r, math.pi) / 2.0) + slack, pts, None
    elif space.kind in TORI:
        data = np.mod(pts + 1.0, TORUS_PERIOD)
        data[data >= TORUS_PERIOD] = 0.0
        p = np.inf if space.kind is SpaceKind.FLAT_TORUS_LINF else 2.0
        radius, box = r + slack, TORUS_PERIOD
    else:
        p = np.inf if space.kind in SUP_NORM_SPACES else 2.0
        radius, data, box = r + slack, pts, None
    tree = cKDTree(data, boxsize=box)
    pairs = tree.query_pairs(radius, p=p, output_type="ndarray")
    return pairs[:, 0], pairs[:, 1]


def _brute_candidates(samples: SampleSet, r: float) -> tuple[np.ndarray, np.ndarray]:
    n = samples.n
    iu, ju = np.triu_indices(n, k=1)
    return iu, ju


def ball_index(samples: SampleSet, r: float, method: str = "tree") -> BallIndex:
    """Open metric balls of radius ``r`` around every sample point.

    ``method="tree"`` prefilters candidate pairs with a k-d tree and a slightly
    enlarged radius; ``method="brute"`` tests all pairs. Both keep exactly the
    pairs with ``distances(...) < r * (1 - TIE_RTOL)``, so the results are
    identical.
    """
    space = samples.space
    r = _check_radius(space, r)
    if space.kind is SpaceKind.CUSTOM_CLOUD and r >= _custom_radius_bound(samples):
        raise InvalidInputError("radius exceeds the point cloud's diameter bound")
    if method == "tree":
        ci, cj = _tree_candidates(samples, r)
    elif method == "brute":
        ci, cj = _brute_candidates(samples, r)
    else:
        raise InvalidInputError(f"unknown ball search method {method!r}")
    pts = samples.points
    keep = np.empty(len(ci), dtype=bool)
    cut = r * (1.0 - TIE_RTOL)
    chunk = 1 << 20
    for s in range(0, len(ci), chunk):
        sl = slice(s, s + chunk)
        keep[sl] = distances(space, pts[ci[sl]], pts[cj[sl]]) < cut
    ci, cj = ci[keep], cj[keep]
    n = samples.n
    diag = np.arange(n)
    rows = np.concatenate([ci, cj, diag])
    cols = np.concatenate([cj, ci, diag])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    indices = cols.astype(np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    return BallIndex(r, indptr, indices)


def analytic_volume(space: SpaceDescriptor, points, r: float) -> np.ndarray:
    """Closed-form measure of the open ball of radius ``r`` about each point."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, m, kind = pts.shape[0], space.m, space.kind
    if kind is SpaceKind.FLAT_TORUS_LINF:
        if r >= 1.0:
            raise InvalidInputError("torus ball volume r**m needs r < 1")
        return np.full(n, r**m)
    if kind is SpaceKind.FLAT_TORUS_EUCLID:
        if r >= 1.0:
            raise InvalidInputError("torus ball volume needs r < 1")
        unit_ball = math.pi ** (m / 2) / math.gamma(m / 2 + 1)
        return np.full(n, unit_ball * r**m / 2**m)
    if kind in (SpaceKind.HYPERCUBE, SpaceKind.INTERVAL):
        b = space.side
        lo = np.maximum(pts - r, 0.0)
        hi = np.minimum(pts + r, b)
        return np.prod(hi - lo, axis=1)
    if kind is SpaceKind.SPHERE2:
        return np.full(n, 2.0 * math.pi * (1.0 - math.cos(min(r, math.pi))))
    raise UnsupportedError(f"no analytic ball volume on {kind.value}")


def ball_volume(samples: SampleSet, idx: BallIndex, mode: str = "empirical") -> VolumeField:
    """Ball measures V_i, either summed from the quadrature or in closed form."""
    if idx.n != samples.n:
        raise InvalidInputError("ball index and samples differ in size")
    if mode == "empirical":
        w = samples.weights[idx.indices]
        vals = np.add.reduceat(w, idx.indptr[:-1])
    elif mode == "analytic":
        vals = analytic_volume(samples.space, samples.points, idx.r)
    else:
        raise UnsupportedError(f"unknown volume mode {mode!r}")
    return VolumeField(mode, vals, idx.r)


def doubling_ratio(samples: SampleSet, r: float, mode: str = "empirical") -> float:
    """max_i V(x_i, 2r) / V(x_i, r)."""
    v1 = ball_volume(samples, ball_index(samples, r), mode).values
    v2 = ball_volume(samples, ball_index(samples, 2 * r), mode).values
    return float(np.max(v2 / v1))
