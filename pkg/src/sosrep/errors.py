"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation and data problems are usage
errors (exit 2), numerical failures are exit 3.
"""

from __future__ import annotations


class SosrepError(Exception):
    """Base class for all package errors."""


class ValidationError(SosrepError, ValueError):
    """Invalid argument, parameter, or configuration."""


class DataError(SosrepError, ValueError):
    """Malformed input data: CSV parsing, labels, shape mismatches."""


class NumericsError(SosrepError, RuntimeError):
    """Numerical failure: divergence, quadrature breakdown, degenerate values."""


class SolverDivergence(NumericsError):
    """The objective became non-finite during optimization."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class VanishingDensity(NumericsError):
    """The fitted function is numerically zero at a query point."""


class AllCandidatesFailed(NumericsError):
    """Every candidate in a tuning sweep failed to produce a usable statistic."""
