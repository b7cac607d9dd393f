"""CSV/JSON readers and writers for samples, spectra and reference tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import SampleSet, from_points


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def fmt(x) -> str:
    """Shortest round-trip text for a float; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


def load_cloud(path) -> SampleSet:
    """Read a ``x1,...,xD,weight`` CSV as a CustomCloud sample set."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "weight" or len(header) < 2:
            raise InvalidInputError(f"{path}: header must be x1,...,xD,weight")
        expect = [f"x{i + 1}" for i in range(len(header) - 1)]
        if [h.strip() for h in header[:-1]] != expect:
            raise InvalidInputError(f"{path}: coordinate columns must be named {','.join(expect)}")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise InvalidInputError(f"{path}: {exc}") from exc
    if any(len(row) != len(header) for row in rows):
        raise InvalidInputError(f"{path}: ragged rows")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return from_points(data[:, :-1], data[:, -1])


def save_samples(samples: SampleSet, path) -> None:
    """Write points and weights as CSV plus a ``{space, n, strategy, seed}`` JSON sidecar."""
    path = Path(path)
    dim = samples.points.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(dim)] + ["weight"])
        for p, wt in zip(samples.points, samples.weights):
            w.writerow([fmt(c) for c in p] + [fmt(wt)])
    meta = {
        "space": samples.space.to_dict(),
        "n": samples.n,
        "strategy": samples.strategy,
        "seed": samples.seed,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def save_spectrum(result, path, meta: dict, eigenvectors_path=None) -> None:
    """``k,lambda,residual`` CSV, optional eigenvector matrix CSV, JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "lambda", "residual"])
        for k, lam, res in result.rows():
            w.writerow([k, fmt(lam), fmt(res)])
    if eigenvectors_path is not None:
        vecs = result.eigenvectors
        with Path(eigenvectors_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{k}" for k in range(vecs.shape[1])])
            for row in vecs:
                w.writerow([fmt(v) for v in row])
    full = {"r": result.r, "n": int(result.eigenvectors.shape[0]),
            "essential_threshold": result.essential_threshold}
    full.update(meta)
    _sidecar(path).write_text(json.dumps(full, indent=2), encoding="utf-8")


def save_reference(rows, path) -> None:
    """``label,value,multiplicity`` CSV for reference spectra and scans."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "value", "multiplicity"])
        for label, value, mult in rows:
            w.writerow([label, fmt(value), mult])
