"""Exception types raised by the library.

Each class carries the CLI exit code it maps to.
"""

from __future__ import annotations


class AmvError(Exception):
    exit_code = 1


class InvalidInputError(AmvError, ValueError):
    """Bad argument: wrong shape, out-of-range radius, malformed config."""

    exit_code = 2


class UnsupportedError(AmvError, ValueError):
    """Requested strategy, mode or space has no implementation for this input."""

    exit_code = 2


class NumericFailure(AmvError, ArithmeticError):
    exit_code = 3


class ConvergenceError(NumericFailure):
    """Iterative eigensolver ran out of iterations.

    ``eigenvalues`` and ``residuals`` hold the best approximations found.
    """

    def __init__(self, message, eigenvalues=None, residuals=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


class BudgetExceeded(AmvError):
    exit_code = 4
