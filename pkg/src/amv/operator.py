"""Ball-averaging operators and the symmetrised AMV Laplacian on a sample set.

With weights ``w`` and ball volumes ``V``, for ``j`` in the ball of ``i``:

    (A f)_i      = (1/V_i) sum_j f_j w_j
    (A* f)_i     = sum_j (f_j / V_j) w_j
    a~(i, j)     = (1/V_i + 1/V_j) / 2
    (Lap f)_i    = (1/r^2) sum_j a~(i, j) w_j (f_j - f_i)

The last form equals ((A f + A* f)/2 - [A~1]_i f_i) / r^2 and annihilates
constants exactly in floating point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .geometry import BallIndex, SampleSet, VolumeField


def _row_sums(values: np.ndarray, indptr: np.ndarray, extended: bool = False) -> np.ndarray:
    if extended:
        values = values.astype(np.longdouble)
    return np.add.reduceat(values, indptr[:-1]).astype(float)


@dataclass(frozen=True, eq=False)
class AmvOperator:
    r: float
    samples: SampleSet
    idx: BallIndex
    vols: VolumeField
    rows: np.ndarray  # row of every stored entry, aligned with idx.indices
    kernel: np.ndarray  # a~(i, j) per stored entry
    avg_one: np.ndarray  # [A~ 1]_i

    @property
    def n(self) -> int:
        return self.samples.n

    @property
    def weights(self) -> np.ndarray:
        return self.samples.weights

    @property
    def cols(self) -> np.ndarray:
        return self.idx.indices

    def _check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.n,):
            raise InvalidInputError(f"expected a vector of length {self.n}, got shape {f.shape}")
        return f

    def _ball_sum(self, values: np.ndarray) -> np.ndarray:
        return _row_sums(values, self.idx.indptr)

    # -- averaging operators -------------------------------------------------

    def apply_averaging(self, f) -> np.ndarray:
        f = self._check(f)
        fw = f * self.weights
        return self._ball_sum(fw[self.cols]) / self.vols.values

    def apply_adjoint(self, f) -> np.ndarray:
        f = self._check(f)
        g = f * self.weights / self.vols.values
        return self._ball_sum(g[self.cols])

    def apply_symmetrized(self, f) -> np.ndarray:
        return 0.5 * (self.apply_averaging(f) + self.apply_adjoint(f))

    def apply_amv(self, f) -> np.ndarray:
        """The symmetrised AMV Laplacian applied to ``f`` (a non-positive operator)."""
        f = self._check(f)
        w = self.weights
        diff = f[self.cols] - f[self.rows]
        return self._ball_sum(self.kernel * w[self.cols] * diff) / self.r**2

    # -- energies --------------------------------------------------------------

    def energy_bilinear(self, f, g) -> float:
        """(1/2) sum_{i, j in ball(i)} a~(i,j) w_i w_j (f_i - f_j)(g_i - g_j) / r^2.

        Terms with a vanishing difference contribute an exact zero, so functions
        with well separated supports have bilinear energy exactly 0.
        """
        f = self._check(f)
        g = self._check(g)
        w = self.weights
        i, j = self.rows, self.cols
        terms = self.kernel * w[i] * w[j] * ((f[i] - f[j]) * (g[i] - g[j]))
        return 0.5 * math.fsum(terms) / self.r**2

    def energy(self, f) -> float:
        f = self._check(f)
        w = self.weights
        i, j = self.rows, self.cols
        d = (f[i] - f[j]) / self.r
        return 0.5 * math.fsum(self.kernel * w[i] * w[j] * d * d)

    def korevaar_schoen_energy(self, f) -> float:
        """(1/2) sum_i w_i (1/V_i) sum_{j in ball(i)} ((f_i - f_j)/r)^2 w_j."""
        f = self._check(f)
        w = self.weights
        i, j = self.rows, self.cols
        d = (f[i] - f[j]) / self.r
        return 0.5 * math.fsum(w[i] / self.vols.values[i] * d * d * w[j])

    def inner(self, f, g) -> float:
        """Weighted inner product <f, g>_w."""
        return math.fsum(self._check(f) * self._check(g) * self.weights)

    # -- diagnostics -----------------------------------------------------------

    def condition_Ir(self) -> float:
        """max_i (A* 1)_i, finite on any finite sample set."""
        return float(np.max(self.apply_adjoint(np.ones(self.n))))

    def norm_bound(self) -> float:
        return amv_norm_bound(self.condition_Ir(), self.r)

    def volume_range(self) -> tuple[float, float]:
        v = self.vols.values
        return float(v.min()), float(v.max())

    def offdiag_row_sums(self) -> np.ndarray:
        """sum_{j != i} a~(i,j) w_j, the diagonal of -Lap times r^2, without cancellation."""
        vals = np.where(self.rows == self.cols, 0.0, self.kernel * self.weights[self.cols])
        return _row_sums(vals, self.idx.indptr, extended=True)

    def matrix(self) -> sp.csr_matrix:
        """Sparse matrix M with (Lap f) = M f."""
        w = self.weights
        off = self.rows != self.cols
        vals = np.where(off, self.kernel * w[self.cols], 0.0) / self.r**2
        diag = self.offdiag_row_sums() / self.r**2
        vals = np.where(off, vals, -diag[self.rows])
        return sp.csr_matrix((vals, self.cols, self.idx.indptr), shape=(self.n, self.n))


def amv_norm_bound(cond_Ir: float, r: float) -> float:
    """(2 sqrt(c) + c + 1) / (2 r^2) with c = ||A* 1||_inf."""
    return (2.0 * math.sqrt(cond_Ir) + cond_Ir + 1.0) / (2.0 * r * r)


def assemble(samples: SampleSet, idx: BallIndex, vols: VolumeField) -> AmvOperator:
    if idx.r != vols.r:
        raise InvalidInputError(f"ball index radius {idx.r} differs from volume radius {vols.r}")
    if idx.n != samples.n or len(vols.values) != samples.n:
        raise InvalidInputError("samples, ball index and volumes differ in size")
    inv = 1.0 / vols.values
    rows = idx.rows()
    cols = idx.indices
    kernel = 0.5 * (inv[rows] + inv[cols])
    avg_one = _row_sums(kernel * samples.weights[cols], idx.indptr, extended=True)
    for a in (rows, kernel, avg_one):
        a.setflags(write=False)
    return AmvOperator(float(idx.r), samples, idx, vols, rows, kernel, avg_one)


def build(samples: SampleSet, r: float, volume_mode: str = "empirical") -> AmvOperator:
    """Ball index, volumes and operator in one call."""
    from .geometry import ball_index, ball_volume

    idx = ball_index(samples, r)
    return assemble(samples, idx, ball_volume(samples, idx, volume_mode))


def dump(op: AmvOperator, path) -> None:
    """Write ``i j value`` triples (0-based) of the Laplacian matrix plus ``<path>.json``."""
    path = Path(path)
    M = op.matrix().tocoo()
    with path.open("w", encoding="utf-8") as fh:
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
    meta = {"r": op.r, "n": op.n, "volume_mode": op.vols.mode}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_dump(path) -> tuple[sp.csr_matrix, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    data = np.loadtxt(path, ndmin=2)
    n = meta["n"]
    M = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))
    return M, meta
