"""Low spectrum of -Lap in the weighted space L^2(w) and related bounds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, InvalidInputError, NumericFailure
from .geometry import SampleSet, ball_index, ball_volume, distances
from .operator import AmvOperator, assemble

log = logging.getLogger(__name__)

DENSE_MAX_N = 4096
ITER_TOL = 1e-8
ZERO_CLAMP = 1e-10


def symmetrize(op: AmvOperator) -> sp.csr_matrix:
    """S = D^{1/2} (-Lap) D^{-1/2} with D = diag(w).

    S is symmetric entry for entry; its eigenvalues are those of -Lap on
    L^2(w) and an eigenvector u of S maps back to f = D^{-1/2} u.
    """
    w = op.weights
    if not np.all(w > 0):
        raise InvalidInputError("weights must be positive")
    i, j = op.rows, op.cols
    off = i != j
    vals = -op.kernel * np.sqrt(w[i] * w[j]) / op.r**2
    diag = op.offdiag_row_sums() / op.r**2
    vals = np.where(off, vals, diag[i])
    return sp.csr_matrix((vals, j, op.idx.indptr), shape=(op.n, op.n))


def is_connected(op: AmvOperator) -> bool:
    g = sp.csr_matrix((np.ones(op.idx.nnz), op.cols, op.idx.indptr), shape=(op.n, op.n))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp == 1


def essential_threshold(op: AmvOperator) -> float:
    """min_i [A~1]_i / r^2, below which eigenvalues are isolated.

    With empirical volumes A1 = 1 and the value is at least 1/(2 r^2); a
    violation there means the operator was assembled incorrectly.
    """
    t = float(np.min(op.avg_one)) / op.r**2
    floor = 1.0 / (2.0 * op.r**2)
    if t < floor * (1.0 - 1e-12):
        if op.vols.mode == "empirical":
            raise NumericFailure(f"essential threshold {t} below 1/(2r^2) = {floor}")
        log.warning("essential threshold %.6g below 1/(2r^2) = %.6g (analytic volumes)", t, floor)
    return t


@dataclass(frozen=True, eq=False)
class SpectralResult:
    r: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # column i is the w-normalised eigenvector of eigenvalues[i]
    residuals: np.ndarray
    essential_threshold: float
    connected: bool = True
    method: str = "dense"

    @property
    def isolated(self) -> np.ndarray:
        """Flags eigenvalues strictly below the essential threshold."""
        return self.eigenvalues < self.essential_threshold

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i, float(v), float(res)) for i, (v, res) in enumerate(zip(self.eigenvalues, self.residuals))]


def _residuals(op: AmvOperator, vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    w = op.weights
    out = np.empty(len(vals))
    for i, lam in enumerate(vals):
        f = vecs[:, i]
        res = -op.apply_amv(f) - lam * f
        out[i] = math.sqrt(float(np.sum(w * res * res)))
    return out


def _dense(S: sp.csr_matrix, k: int) -> tuple[np.ndarray, np.ndarray]:
    A = S.toarray()
    return sla.eigh(A, subset_by_index=[0, k], overwrite_a=True, check_finite=False)


def _iterative(S: sp.csr_matrix, k: int, shift: float, seed: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(S.shape[0])
    nev = k + 1
    ncv = min(S.shape[0], max(2 * nev + 1, 20))
    try:
        vals, vecs = spla.eigsh(
            S.tocsc(), k=nev, sigma=shift, which="LM", v0=v0, ncv=ncv,
            maxiter=10 * k + 200, tol=tol,
        )
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"Lanczos did not converge for {nev} eigenpairs", eigenvalues=exc.eigenvalues
        ) from exc
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def eig_lowest(op: AmvOperator, k: int, method: str = "auto", seed: int = 0) -> SpectralResult:
    """Eigenpairs 0..k of -Lap, ascending, w-orthonormal.

    ``auto`` uses a dense symmetric solve for n <= 4096 and shift-invert
    Lanczos (ARPACK) otherwise.
    """
    n = op.n
    if int(k) != k or k < 0 or k + 1 > n:
        raise InvalidInputError(f"need 0 <= k < n = {n}, got k = {k}")
    k = int(k)
    if method == "auto":
        method = "dense" if n <= DENSE_MAX_N else "iterative"
    threshold = essential_threshold(op)
    S = symmetrize(op)
    if method == "dense":
        vals, vecs = _dense(S, k)
    elif method == "iterative":
        if k + 1 >= n - 1:
            raise InvalidInputError("iterative solver needs k + 2 < n; use method='dense'")
        vals, vecs = _iterative(S, k, -0.01 * threshold, seed, ITER_TOL)
    else:
        raise InvalidInputError(f"unknown eigensolver {method!r}")
    f = vecs / np.sqrt(op.weights)[:, None]
    connected = is_connected(op)
    scale = op.norm_bound()
    if connected and abs(vals[0]) < ZERO_CLAMP * scale:
        vals = vals.copy()
        vals[0] = 0.0
    if not connected:
        log.warning("ball graph at r=%g is disconnected; the zero eigenvalue is repeated", op.r)
    res = _residuals(op, vals, f)
    if method == "iterative" and np.any(res > ITER_TOL * scale):
        raise ConvergenceError("Lanczos residuals above tolerance", eigenvalues=vals, residuals=res)
    return SpectralResult(op.r, vals, f, res, threshold, connected, method)


def spectral_radius(op: AmvOperator) -> float:
    """Largest eigenvalue of -Lap (equal to its norm since -Lap >= 0)."""
    S = symmetrize(op)
    n = op.n
    if n <= 1500:
        return float(sla.eigvalsh(S.toarray(), subset_by_index=[n - 1, n - 1])[0])
    v0 = np.random.default_rng(0).standard_normal(n)
    val = spla.eigsh(S, k=1, which="LA", v0=v0, tol=1e-10, return_eigenvectors=False,
                     ncv=min(n, 40), maxiter=5000)
    return float(val[0])


def rayleigh(op: AmvOperator, f) -> float:
    f = np.asarray(f, dtype=float)
    nrm = op.inner(f, f)
    if not nrm > 0:
        raise InvalidInputError("Rayleigh quotient of the zero vector")
    return op.energy(f) / nrm


def subspace_max_rayleigh(op: AmvOperator, F) -> float:
    """sup of the Rayleigh quotient over the column span of ``F`` (n x d)."""
    F = np.asarray(F, dtype=float)
    w = op.weights
    G = F.T @ (w[:, None] * F)
    LF = np.column_stack([-op.apply_amv(F[:, c]) for c in range(F.shape[1])])
    H = F.T @ (w[:, None] * LF)
    H = 0.5 * (H + H.T)
    return float(sla.eigh(H, G, eigvals_only=True)[-1])


@dataclass(frozen=True, eq=False)
class TentBound:
    value: float
    energies: np.ndarray
    cross_energies: np.ndarray
    rbar: float
    functions: np.ndarray
    op: AmvOperator = field(repr=False)


def tent_upper_bound(
    samples: SampleSet, r: float, centers, volume_mode: str = "empirical"
) -> TentBound:
    """Upper bound on the k-th min-max value from k+1 disjoint tent functions.

    Each tent is (1 - d(c_i, .)/rbar)^+ with rbar a quarter of the minimum
    distance between centers, normalised in L^2(w). For r < rbar the tents'
    bilinear energies vanish pairwise and the k-th eigenvalue is at most the
    largest single tent energy.
    """
    space = samples.space
    C = np.asarray(centers, dtype=float)
    if C.ndim == 1:
        C = C[:, None] if space.ambient_dim == 1 else C[None, :]
    kk = C.shape[0]
    if kk < 1:
        raise InvalidInputError("need at least one center")
    if kk == 1:
        rbar = math.inf
    else:
        ii, jj = np.triu_indices(kk, k=1)
        dmin = float(np.min(distances(space, C[ii], C[jj])))
        if dmin == 0.0:
            raise InvalidInputError("tent centers must be pairwise distinct")
        rbar = dmin / 4.0
    if not r < rbar:
        raise InvalidInputError(f"r = {r} must be below rbar = {rbar} for disjoint tents")
    idx = ball_index(samples, r)
    op = assemble(samples, idx, ball_volume(samples, idx, volume_mode))
    F = np.empty((samples.n, kk))
    for c in range(kk):
        d = distances(space, samples.points, C[c])
        tent = np.ones(samples.n) if math.isinf(rbar) else np.maximum(1.0 - d / rbar, 0.0)
        nrm = op.inner(tent, tent)
        if not nrm > 0:
            raise InvalidInputError(f"tent {c} contains no sample point")
        F[:, c] = tent / math.sqrt(nrm)
    energies = np.array([op.energy(F[:, c]) for c in range(kk)])
    cross = np.zeros((kk, kk))
    for a in range(kk):
        for b in range(a + 1, kk):
            cross[a, b] = cross[b, a] = op.energy_bilinear(F[:, a], F[:, b])
    if np.any(cross != 0.0):
        raise NumericFailure("tent functions interact: nonzero cross energy")
    return TentBound(float(energies.max()), energies, cross, rbar, F, op)
