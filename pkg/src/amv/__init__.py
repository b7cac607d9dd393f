"""Symmetrised asymptotic-mean-value Laplacians on sampled metric measure spaces."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AmvError,
    BudgetExceeded,
    ConvergenceError,
    InvalidInputError,
    NumericFailure,
    UnsupportedError,
)
from .geometry import (  # noqa: E402
    SampleSet,
    SpaceDescriptor,
    SpaceKind,
    ball_index,
    ball_volume,
    distance,
    flat_torus,
    hypercube,
    interval,
    sample,
    sphere2,
)
from .operator import AmvOperator, assemble, build  # noqa: E402
from .spectra import eig_lowest, rayleigh, symmetrize, tent_upper_bound  # noqa: E402
from .reference import cm, laplace_spectrum, sinc_scan, torus_linf_amv_spectrum  # noqa: E402

__all__ = [
    "AmvError", "BudgetExceeded", "ConvergenceError", "InvalidInputError", "NumericFailure",
    "UnsupportedError", "SampleSet", "SpaceDescriptor", "SpaceKind", "ball_index", "ball_volume",
    "distance", "flat_torus", "hypercube", "interval", "sample", "sphere2", "AmvOperator",
    "assemble", "build", "eig_lowest", "rayleigh", "symmetrize", "tent_upper_bound", "cm",
    "laplace_spectrum", "sinc_scan", "torus_linf_amv_spectrum", "__version__",
]
