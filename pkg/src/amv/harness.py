"""Experiment runners behind the ``amv`` command line.

Every runner takes an :class:`ExperimentConfig` and returns a
:class:`ResultTable`. Tables are deterministic given the config: timing is
only recorded when ``record_timing`` is set.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import eval_legendre

from . import __version__
from .errors import InvalidInputError, UnsupportedError
from .geometry import (
    TORI,
    SampleSet,
    SpaceDescriptor,
    SpaceKind,
    analytic_volume,
    doubling_ratio,
    flat_torus,
    hypercube,
    interval,
    sample,
    sphere2,
)
from .io import fmt, load_cloud
from .operator import AmvOperator, build
from .reference import (
    laplace_spectrum,
    limit_constant,
    sinc_scan,
    torus_linf_amv_spectrum,
)
from .spectra import eig_lowest, essential_threshold, spectral_radius

log = logging.getLogger(__name__)

SCHEMA = "amv-table/1"
COMMANDS = ("spectrum", "converge", "l2limit", "oracle-torus", "scaling", "diagnostics", "sinc-scan")
EIG_COLUMNS = ("r", "n", "k", "lambda_computed", "reference_value", "relative_error", "residual", "wall_time_ms")
TEST_FUNCTIONS = ("neumann_cos", "linear", "torus_mode", "sphere_harmonic")
MIN_POINTS_PER_BALL = 30


def relative_error(value: float, reference: float) -> float:
    return abs(value - reference) / max(reference, 1e-30)


# ---------------------------------------------------------------------------
# configuration


def space_from_config(desc) -> SpaceDescriptor:
    """Build a space from a descriptor, a dict, or a short name."""
    if isinstance(desc, SpaceDescriptor):
        return desc
    if isinstance(desc, str):
        desc = {"kind": desc}
    desc = dict(desc)
    kind = str(desc.get("kind", "")).lower()
    m = int(desc.get("m", 1))
    if kind in ("torus", "flattoruslinf", "flattoruseuclid"):
        metric = desc.get("metric") or ("euclid" if kind == "flattoruseuclid" else "linf")
        return flat_torus(m, metric)
    if kind in ("hypercube", "cube"):
        return hypercube(m, float(desc.get("side", 1.0)))
    if kind == "interval":
        return interval(float(desc.get("side", 1.0)))
    if kind in ("sphere", "sphere2"):
        return sphere2()
    if kind in ("custom", "customcloud"):
        raise InvalidInputError("custom clouds are given with 'cloud': <path to CSV>")
    raise InvalidInputError(f"unknown space {desc.get('kind')!r}")


def _as_list(x) -> list | None:
    if x is None:
        return None
    if isinstance(x, (list, tuple)):
        return list(x)
    return [x]


@dataclass
class ExperimentConfig:
    command: str
    space: Any = "interval"
    n: Any = None
    r: Any = 0.1
    k: int = 5
    strategy: str = "grid"
    seed: int = 0
    volume_mode: str = "empirical"
    output_path: str | None = None
    test_function: str | None = None
    frequency: int = 1  # k in cos(pi k x / L) and in the sphere harmonic degree
    side: float | None = None  # hypercube side b for the scaling identity
    pmax: int = 64
    method: str = "auto"
    cloud: str | None = None
    budget_s: float | None = None
    record_timing: bool = False
    min_points_per_ball: int = MIN_POINTS_PER_BALL

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidInputError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        if self.cloud is None:
            self.space = space_from_config(self.space)
        if self.volume_mode not in ("empirical", "analytic"):
            raise InvalidInputError(f"unknown volume mode {self.volume_mode!r}")
        rs = _as_list(self.r)
        if not rs or any(not float(x) > 0 for x in rs):
            raise InvalidInputError("radii must be positive")
        if self.command in ("converge", "l2limit") and any(b >= a for a, b in zip(rs, rs[1:])):
            raise InvalidInputError("r list must be strictly decreasing")
        if self.space is not None and isinstance(self.space, SpaceDescriptor) and self.command != "sinc-scan":
            bound = self.space.max_radius
            if any(float(x) >= bound for x in rs):
                raise InvalidInputError(f"radius outside the valid range (0, {bound}) of {self.space.kind.value}")
        if int(self.k) < 0:
            raise InvalidInputError("k must be nonnegative")
        if int(self.frequency) < 1:
            raise InvalidInputError("frequency must be a positive integer")

    @property
    def radii(self) -> list[float]:
        return [float(x) for x in _as_list(self.r)]

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.space, SpaceDescriptor):
            d["space"] = self.space.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "out" in d:
            d["output_path"] = d.pop("out")
        if "volumes" in d:
            d["volume_mode"] = d.pop("volumes")
        sp = d.get("space")
        if isinstance(sp, dict) and "total_measure" in sp:
            d["space"] = SpaceDescriptor.from_dict(sp)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# result tables


@dataclass
class ResultTable:
    command: str
    columns: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    truncated: bool = False

    def add(self, **values) -> None:
        extra = set(values) - set(self.columns)
        if extra:
            raise KeyError(f"unknown columns {sorted(extra)}")
        self.rows.append(tuple(values.get(c) for c in self.columns))

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [row[j] for row in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([fmt(v) for v in row])

    def meta(self) -> dict:
        out = {"schema": SCHEMA, "command": self.command, "columns": list(self.columns),
               "version": __version__, "truncated": self.truncated}
        out.update(self.metadata)
        return out

    def write(self, path) -> None:
        """CSV at ``path`` and JSON metadata at ``<path>.meta.json``."""
        self.to_csv(path)
        Path(str(path) + ".meta.json").write_text(
            json.dumps(self.meta(), indent=2, sort_keys=True, default=_json_default), encoding="utf-8"
        )


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


class _Clock:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.start = time.perf_counter()
        self.mark = self.start

    def lap_ms(self):
        now = time.perf_counter()
        ms, self.mark = (now - self.mark) * 1e3, now
        return round(ms, 3) if self.cfg.record_timing else None

    def exhausted(self) -> bool:
        b = self.cfg.budget_s
        return b is not None and time.perf_counter() - self.start > b


def _new_table(cfg: ExperimentConfig, columns, **meta) -> ResultTable:
    md = {"config": cfg.to_dict()}
    md.update(meta)
    return ResultTable(cfg.command, tuple(columns), metadata=md)


# ---------------------------------------------------------------------------
# sample construction


def min_ball_fraction(space: SpaceDescriptor, r: float) -> float:
    """Smallest analytic ball measure over the space, as a fraction of the total."""
    if space.kind in (SpaceKind.HYPERCUBE, SpaceKind.INTERVAL):
        return min(r, space.side) ** space.m / space.total_measure
    probe = np.zeros((1, space.ambient_dim))
    if space.kind is SpaceKind.SPHERE2:
        probe[0, 2] = 1.0
    return float(analytic_volume(space, probe, r)[0]) / space.total_measure


def n_for_radius(space: SpaceDescriptor, r: float, strategy: str, min_points: int = MIN_POINTS_PER_BALL) -> int:
    """Sample size giving every ball at least ``min_points`` points in expectation."""
    n = math.ceil(min_points / min_ball_fraction(space, r))
    if strategy == "grid":
        k = math.ceil(n ** (1.0 / space.m) - 1e-9)
        n = k**space.m
    return max(n, 2)


def _n_list(cfg: ExperimentConfig, radii) -> list[int]:
    ns = _as_list(cfg.n)
    if ns is None:
        if cfg.cloud is not None:
            return [None] * len(radii)
        return [n_for_radius(cfg.space, r, cfg.strategy, cfg.min_points_per_ball) for r in radii]
    if len(ns) == 1:
        return [int(ns[0])] * len(radii)
    if len(ns) != len(radii):
        raise InvalidInputError("n list must match the r list")
    return [int(x) for x in ns]


def make_samples(cfg: ExperimentConfig, n) -> SampleSet:
    if cfg.cloud is not None:
        return load_cloud(cfg.cloud)
    return sample(cfg.space, n, cfg.strategy, cfg.seed)


def _targets(space: SpaceDescriptor, count: int):
    try:
        return float(limit_constant(space)), laplace_spectrum(space, count).expanded(count)
    except UnsupportedError:
        return None, None


# ---------------------------------------------------------------------------
# commands


def run_spectrum(cfg: ExperimentConfig) -> ResultTable:
    clock = _Clock(cfg)
    r = cfg.radii[0]
    n = _n_list(cfg, [r])[0]
    samples = make_samples(cfg, n)
    op = build(samples, r, cfg.volume_mode)
    res = eig_lowest(op, cfg.k, cfg.method, cfg.seed)
    const, mu = _targets(samples.space, cfg.k + 1)
    table = _new_table(
        cfg, EIG_COLUMNS + ("isolated",),
        essential_threshold=res.essential_threshold, connected=res.connected,
        solver=res.method, target_constant=const, space=samples.space.to_dict(),
    )
    if not res.connected:
        table.metadata["warning"] = "ball graph is disconnected; zero eigenvalue repeated"
    ms = clock.lap_ms()
    for i, lam in enumerate(res.eigenvalues):
        ref = const * mu[i] if const is not None else float("nan")
        table.add(r=r, n=samples.n, k=i, lambda_computed=float(lam), reference_value=ref,
                  relative_error=relative_error(lam, ref), residual=float(res.residuals[i]),
                  wall_time_ms=ms, isolated=bool(res.isolated[i]))
    return table


def run_convergence(cfg: ExperimentConfig) -> ResultTable:
    if cfg.cloud is not None:
        raise UnsupportedError("no reference spectrum for a custom cloud")
    clock = _Clock(cfg)
    radii = cfg.radii
    ns = _n_list(cfg, radii)
    const, mu = _targets(cfg.space, cfg.k + 1)
    if const is None:
        raise UnsupportedError(f"no reference spectrum for {cfg.space.kind.value}")
    table = _new_table(cfg, EIG_COLUMNS + ("error_ratio",), target_constant=const,
                       n_policy="config" if cfg.n is not None else f"min {cfg.min_points_per_ball} points per ball")
    prev = {}
    for r, n in zip(radii, ns):
        if clock.exhausted():
            table.truncated = True
            break
        samples = make_samples(cfg, n)
        res = eig_lowest(build(samples, r, cfg.volume_mode), cfg.k, cfg.method, cfg.seed)
        ms = clock.lap_ms()
        for i, lam in enumerate(res.eigenvalues):
            ref = const * mu[i]
            err = relative_error(lam, ref)
            ratio = err / prev[i] if prev.get(i) else None
            prev[i] = err
            table.add(r=r, n=samples.n, k=i, lambda_computed=float(lam), reference_value=ref,
                      relative_error=err, residual=float(res.residuals[i]), wall_time_ms=ms,
                      error_ratio=ratio)
    return table


def named_function(name: str, samples: SampleSet, k: int = 1):
    """Values of a named test function and of its exact Laplacian at the samples."""
    space, x = samples.space, samples.points
    k = max(int(k), 1)
    if name in ("neumann_cos", "linear"):
        if space.kind not in (SpaceKind.INTERVAL, SpaceKind.HYPERCUBE):
            raise InvalidInputError(f"{name} is defined on the interval or hypercube")
        L = space.side
        if name == "linear":
            return x[:, 0].copy(), np.zeros(samples.n)
        a = math.pi * k / L
        f = np.cos(a * x[:, 0])
        return f, -a * a * f
    if name == "torus_mode":
        if space.kind not in TORI:
            raise InvalidInputError("torus_mode is defined on the flat torus")
        a = math.pi * k
        f = np.cos(a * x[:, 0])
        return f, -a * a * f
    if name == "sphere_harmonic":
        if space.kind is not SpaceKind.SPHERE2:
            raise InvalidInputError("sphere_harmonic is defined on Sphere2")
        f = eval_legendre(k, x[:, 2])
        return f, -k * (k + 1) * f
    raise InvalidInputError(f"unknown test function {name!r}")


def _wnorm(samples: SampleSet, v) -> float:
    return math.sqrt(math.fsum(samples.weights * v * v))


def run_l2limit(cfg: ExperimentConfig, test_function: str | None = None) -> ResultTable:
    name = test_function or cfg.test_function
    if name is None:
        name = {SpaceKind.SPHERE2: "sphere_harmonic"}.get(cfg.space.kind, "torus_mode" if cfg.space.kind in TORI else "neumann_cos")
    if name not in TEST_FUNCTIONS:
        raise InvalidInputError(f"unknown test function {name!r}")
    clock = _Clock(cfg)
    radii = cfg.radii
    ns = _n_list(cfg, radii)
    const = float(limit_constant(cfg.space))
    table = _new_table(cfg, ("r", "n", "test_function", "error_l2", "amv_l2", "amv_sup", "ratio", "wall_time_ms"),
                       target_constant=const, test_function=name,
                       ratio_column="amv_l2 growth" if name == "linear" else "error_l2 ratio")
    prev = None
    for r, n in zip(radii, ns):
        if clock.exhausted():
            table.truncated = True
            break
        samples = make_samples(cfg, n)
        op = build(samples, r, cfg.volume_mode)
        f, lap = named_function(name, samples, cfg.frequency)
        g = op.apply_amv(f)
        err = _wnorm(samples, g - const * lap)
        amv = _wnorm(samples, g)
        tracked = amv if name == "linear" else err
        ratio = tracked / prev if prev else None
        prev = tracked
        table.add(r=r, n=samples.n, test_function=name, error_l2=err, amv_l2=amv,
                  amv_sup=float(np.max(np.abs(g))), ratio=ratio, wall_time_ms=clock.lap_ms())
    return table


def _clusters(values, rtol=1e-6) -> list[int]:
    sizes = []
    for i, v in enumerate(values):
        if i and abs(v - values[i - 1]) <= rtol * max(abs(v), 1e-300):
            sizes[-1] += 1
        else:
            sizes.append(1)
    return sizes


def run_oracle_torus(cfg: ExperimentConfig) -> ResultTable:
    space = cfg.space
    if cfg.cloud is not None or space.kind is not SpaceKind.FLAT_TORUS_LINF:
        raise InvalidInputError("oracle-torus needs the sup-norm flat torus")
    if cfg.strategy != "grid" or cfg.volume_mode != "analytic":
        raise InvalidInputError("oracle-torus needs grid sampling and analytic volumes")
    clock = _Clock(cfg)
    r = cfg.radii[0]
    n = _n_list(cfg, [r])[0]
    samples = make_samples(cfg, n)
    res = eig_lowest(build(samples, r, "analytic"), cfg.k, cfg.method, cfg.seed)
    ref = torus_linf_amv_spectrum(space.m, r, cfg.pmax)
    ms = clock.lap_ms()
    count = cfg.k + 1
    table = _new_table(cfg, EIG_COLUMNS + ("mode",), essential_threshold=res.essential_threshold)
    errs = []
    for i in range(count):
        lam, want = float(res.eigenvalues[i]), float(ref.values[i])
        err = relative_error(lam, want)
        if i:
            errs.append(err)
        table.add(r=r, n=samples.n, k=i, lambda_computed=lam, reference_value=want,
                  relative_error=err, residual=float(res.residuals[i]), wall_time_ms=ms,
                  mode=" ".join(str(int(c)) for c in ref.labels[i]))
    computed = _clusters(list(res.eigenvalues[1:count]))
    expected = _clusters(list(ref.values[1:count]))
    table.metadata.update(
        max_relative_mismatch=max(errs) if errs else 0.0,
        multiplicities_computed=computed,
        multiplicities_reference=expected,
        multiplicities_match=computed == expected,
    )
    return table


def run_scaling(cfg: ExperimentConfig) -> ResultTable:
    space = cfg.space
    if cfg.cloud is not None or space.kind not in (SpaceKind.HYPERCUBE, SpaceKind.INTERVAL):
        raise InvalidInputError("scaling needs a hypercube")
    b = float(cfg.side) if cfg.side is not None else space.side
    ns = _as_list(cfg.n)
    if ns is None:
        raise InvalidInputError("scaling needs an explicit n")
    if len(set(int(x) for x in ns)) != 1:
        raise InvalidInputError("scaling compares grids of the same size n")
    n = int(ns[0])
    clock = _Clock(cfg)
    m = space.m
    small, unit = hypercube(m, b), hypercube(m, 1.0)
    if m == 1:
        small, unit = interval(b), interval(1.0)
    table = _new_table(cfg, EIG_COLUMNS + ("side",), scale_factor=b**-2)
    for r in cfg.radii:
        if clock.exhausted():
            table.truncated = True
            break
        lam_b = eig_lowest(build(sample(small, n, "grid"), r, cfg.volume_mode), 1, cfg.method).eigenvalues[1]
        res1 = eig_lowest(build(sample(unit, n, "grid"), r / b, cfg.volume_mode), 1, cfg.method)
        ref = float(res1.eigenvalues[1]) / b**2
        table.add(r=r, n=n, k=1, lambda_computed=float(lam_b), reference_value=ref,
                  relative_error=relative_error(lam_b, ref), residual=float(res1.residuals[1]),
                  wall_time_ms=clock.lap_ms(), side=b)
    return table


def diagnostics_rows(op: AmvOperator) -> list[tuple[str, float, float | None, bool | None]]:
    """(quantity, value, bound, holds) for the operator's structural conditions."""
    samples, r, m = op.samples, op.r, op.samples.space.m
    cond = op.condition_Ir()
    vmin, vmax = op.volume_range()
    rho = spectral_radius(op)
    bound = op.norm_bound()
    thr = essential_threshold(op)
    rows = [
        ("condition_Ir", cond, None, None),
        ("volume_min", vmin, None, None),
        ("volume_max", vmax, None, None),
        ("spectral_radius", rho, bound, rho <= bound * (1 + 1e-12)),
        ("essential_threshold", thr, 1 / (2 * r * r), thr >= (1 - 1e-12) / (2 * r * r)),
    ]
    if 2 * r < samples.space.max_radius and samples.space.kind.value != "CustomCloud":
        dr = doubling_ratio(samples, r, op.vols.mode)
        rows.append(("doubling_ratio", dr, 4.0**m, dr <= 4.0**m))
    v = op.vols.values / r**m
    rows.append(("ahlfors_ratio", float(v.max() / v.min()), None, None))
    return rows


def run_diagnostics(cfg: ExperimentConfig) -> ResultTable:
    clock = _Clock(cfg)
    table = _new_table(cfg, ("r", "n", "quantity", "value", "bound", "holds", "wall_time_ms"))
    radii = cfg.radii
    ns = _n_list(cfg, radii)
    for r, n in zip(radii, ns):
        if clock.exhausted():
            table.truncated = True
            break
        samples = make_samples(cfg, n)
        op = build(samples, r, cfg.volume_mode)
        rows = diagnostics_rows(op)
        ms = clock.lap_ms()
        for q, val, bound, holds in rows:
            table.add(r=r, n=samples.n, quantity=q, value=float(val), bound=bound, holds=holds, wall_time_ms=ms)
    return table


def run_sinc_scan(cfg: ExperimentConfig) -> ResultTable:
    m = cfg.space.m if isinstance(cfg.space, SpaceDescriptor) else 1
    radii = cfg.radii if len(cfg.radii) > 1 else [round(0.01 * i, 2) for i in range(1, 101)]
    rep = sinc_scan(m, radii, cfg.pmax)
    table = _new_table(cfg, ("label", "value", "multiplicity"), minimum=rep.minimum,
                       argmin_r=rep.argmin_r, argmin_p=list(rep.argmin_p),
                       leading_coefficient=rep.leading_coefficient, m=m, pmax=cfg.pmax)
    for (r, v), p in zip(rep.per_r, rep.per_r_argmin):
        table.add(label=f"r={fmt(float(r))} p=({' '.join(map(str, p))})", value=float(v), multiplicity=1)
    return table


RUNNERS = {
    "spectrum": run_spectrum,
    "converge": run_convergence,
    "l2limit": run_l2limit,
    "oracle-torus": run_oracle_torus,
    "scaling": run_scaling,
    "diagnostics": run_diagnostics,
    "sinc-scan": run_sinc_scan,
}


def run(cfg: ExperimentConfig) -> ResultTable:
    table = RUNNERS[cfg.command](cfg)
    if cfg.output_path:
        table.write(cfg.output_path)
    return table
