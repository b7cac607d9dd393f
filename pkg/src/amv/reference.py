"""Closed-form reference quantities for the model spaces.

Torus modes are e^{i pi p.x} on [-1, 1)^m, so the torus Laplacian has
eigenvalues pi^2 |p|^2. Averaging a mode over a sup-norm cube of half-width r
multiplies it by prod_i sinc(p_i r) (normalised sinc), which gives the exact
AMV spectrum of the sup-norm torus. Cube balls have second moment r^2/3 per
coordinate, so their AMV limit constant is 1/6 for every m; the round-ball
constant C_m = 1/(2(m+2)) applies to geodesic balls. The two agree when m = 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate

from .errors import InvalidInputError, NumericFailure, UnsupportedError
from .geometry import SpaceDescriptor, SpaceKind

CUBE_BALL_CONSTANT = Fraction(1, 6)


def cm(m: int) -> Fraction:
    """Round-ball moment constant C_m = 1/(2(m+2))."""
    if int(m) != m or m < 1:
        raise InvalidInputError(f"C_m needs a positive integer m, got {m!r}")
    return Fraction(1, 2 * (int(m) + 2))


def limit_constant(space: SpaceDescriptor) -> Fraction:
    """Constant c with Lap_r f -> c Lap f for the space's ball shape."""
    if space.kind in (SpaceKind.FLAT_TORUS_LINF, SpaceKind.HYPERCUBE):
        return CUBE_BALL_CONSTANT
    return cm(space.m)


def sinc(x):
    """Normalised sinc, sin(pi x)/(pi x) with sinc(0) = 1 and exact zeros at nonzero integers."""
    x = np.asarray(x, dtype=float)
    return np.where((x == np.round(x)) & (x != 0), 0.0, np.sinc(x))


@dataclass(frozen=True)
class RefSpectrum:
    space: SpaceDescriptor
    entries: tuple  # (value, multiplicity, labels) with distinct ascending values

    def expanded(self, count: int) -> np.ndarray:
        """First ``count`` eigenvalues repeated according to multiplicity."""
        out = []
        for value, mult, _ in self.entries:
            out.extend([value] * mult)
            if len(out) >= count:
                return np.array(out[:count])
        raise InvalidInputError(f"reference spectrum holds fewer than {count} eigenvalues")


def _group(values_labels, count):
    """Group (exact_key, value, label) triples into ``count`` distinct levels."""
    levels = {}
    for key, value, label in values_labels:
        lv = levels.setdefault(key, [value, []])
        lv[1].append(label)
    keys = sorted(levels)[:count]
    return tuple((levels[k][0], len(levels[k][1]), tuple(levels[k][1])) for k in keys)


def laplace_spectrum(space: SpaceDescriptor, count: int) -> RefSpectrum:
    """Lowest ``count`` distinct Laplace (Neumann, with boundary) eigenvalues."""
    if count < 1:
        raise InvalidInputError("count must be positive")
    kind, m = space.kind, space.m
    pi2 = math.pi**2
    if kind is SpaceKind.SPHERE2:
        entries = tuple((float(l * (l + 1)), 2 * l + 1, (l,)) for l in range(count))
        return RefSpectrum(space, entries)
    if kind in (SpaceKind.FLAT_TORUS_LINF, SpaceKind.FLAT_TORUS_EUCLID):
        signed = True
        scale = 1.0
    elif kind in (SpaceKind.HYPERCUBE, SpaceKind.INTERVAL):
        signed = False
        scale = 1.0 / space.side**2
    else:
        raise UnsupportedError(f"no reference spectrum for {kind.value}")
    # every level with |p|^2 <= R^2 lives in the box |p|_inf <= R
    R = 1
    while True:
        rng = range(-R, R + 1) if signed else range(0, R + 1)
        items = []
        for p in itertools.product(rng, repeat=m):
            q = sum(c * c for c in p)
            if q <= R * R:
                items.append((q, pi2 * q * scale, p))
        entries = _group(items, count)
        if len(entries) == count:
            return RefSpectrum(space, entries)
        R *= 2


@dataclass(frozen=True)
class SincSpectrum:
    r: float
    m: int
    values: np.ndarray  # ascending
    labels: np.ndarray  # (len(values), m) integer mode vectors
    classes: tuple  # (value, multiplicity) per symmetry class, ascending

    def lowest(self, count: int) -> np.ndarray:
        return self.values[:count]


def torus_linf_symbol(p, r: float) -> np.ndarray:
    """(1/r^2)(1 - prod_i sinc(p_i r)) for integer mode vectors ``p`` (..., m)."""
    p = np.asarray(p, dtype=float)
    return (1.0 - np.prod(sinc(p * r), axis=-1)) / (r * r)


def torus_linf_amv_spectrum(m: int, r: float, pmax: int = 64) -> SincSpectrum:
    """Exact spectrum of -Lap_r on the sup-norm torus for modes |p|_inf <= pmax."""
    if not 0 < r < 1:
        raise InvalidInputError(f"need 0 < r < 1, got {r}")
    if pmax < 1:
        raise InvalidInputError("pmax must be at least 1")
    ax = np.arange(-pmax, pmax + 1)
    P = np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)
    # modes related by sign changes and permutations share one exact value
    key = np.sort(np.abs(P), axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    class_vals = torus_linf_symbol(uniq, r)
    vals = class_vals[inverse.ravel()]
    order = np.lexsort((inverse.ravel(), vals))
    corder = np.argsort(class_vals, kind="stable")
    classes = tuple((float(class_vals[c]), int(counts[c])) for c in corder)
    return SincSpectrum(r, m, vals[order], P[order], classes)


@dataclass(frozen=True)
class ScanReport:
    minimum: float
    argmin_r: float
    argmin_p: tuple
    per_r: np.ndarray  # (len(r_grid), 2): r, minimum over p at that r
    per_r_argmin: tuple  # minimising p for each r
    leading_coefficient: float  # G(y)/|y|^2 at the smallest sampled |y|


def sinc_scan(m: int, r_grid, pmax: int = 64) -> ScanReport:
    """Brute-force inf over 0 != p, |p|_inf <= pmax, of |(1 - prod sinc(p_i r))/r^2| on a grid of r."""
    r_grid = np.asarray(list(r_grid), dtype=float)
    if r_grid.size == 0:
        raise InvalidInputError("empty r grid")
    if np.any(r_grid <= 0) or np.any(r_grid > 1):
        raise InvalidInputError("r grid must lie in (0, 1]")
    ax = np.arange(-pmax, pmax + 1)
    best = (math.inf, None, None)
    per_r = np.empty((r_grid.size, 2))
    argmins = []
    for t, r in enumerate(r_grid):
        s = sinc(ax * r)
        prod = s
        for _ in range(m - 1):
            prod = np.multiply.outer(prod, s)
        val = np.abs((1.0 - prod) / (r * r))
        val[(pmax,) * m] = np.inf  # p = 0
        v = float(val.min())
        # ties (e.g. r = 1, where every mode gives 1/r^2) go to the smallest
        # |p|_inf, then the smallest |p|_1
        hits = np.abs(np.argwhere(val == v) - pmax)
        keys = hits[:, ::-1].T.tolist() + [hits.sum(axis=1), hits.max(axis=1)]
        p = tuple(int(c) for c in hits[np.lexsort(keys)[0]])
        per_r[t] = r, v
        argmins.append(p)
        if v < best[0]:
            best = (v, float(r), p)
    y = float(r_grid.min())
    lead = float((1.0 - sinc(y)) / (y * y))
    if not best[0] > 0:
        raise NumericFailure("sinc scan minimum is not positive")
    return ScanReport(best[0], best[1], best[2], per_r, tuple(argmins), lead)


def round_ball_symbol(m: int, p_norm: float, r: float) -> float:
    """Mean of cos(pi p.xi) over the Euclidean ball of radius r in R^m, |p| = p_norm.

    Computed by radial quadrature (no Bessel functions).
    """
    if m not in (1, 2, 3):
        raise InvalidInputError("round_ball_symbol supports m in {1, 2, 3}")
    if p_norm < 0 or not r > 0:
        raise InvalidInputError("need p_norm >= 0 and r > 0")
    a = math.pi * p_norm
    if a == 0.0:
        return 1.0
    if m == 1:
        return float(sinc(p_norm * r))
    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200, full_output=1)
    if m == 3:
        # spherical shell mean of cos(a rho u_1) is sin(a rho)/(a rho)
        val, err, *_ = integrate.quad(lambda rho: rho * np.sin(a * rho) / a, 0.0, r, **opts)
        val, err = 3.0 * val / r**3, 3.0 * err / r**3
    else:

        def shell(rho):
            inner, _, *rest = integrate.quad(lambda th: math.cos(a * rho * math.cos(th)), 0.0, math.pi, **opts)
            return rho * inner / math.pi

        val, err, *_ = integrate.quad(shell, 0.0, r, **opts)
        val, err = 2.0 * val / r**2, 2.0 * err / r**2
    if not err < 1e-10:
        raise NumericFailure(f"radial quadrature error estimate {err:.2e} above 1e-10")
    return float(val)


def target_spectrum(space: SpaceDescriptor, count: int) -> np.ndarray:
    """Limit values c * mu_k for k < count (c from :func:`limit_constant`)."""
    mu = laplace_spectrum(space, count).expanded(count)
    return float(limit_constant(space)) * mu
