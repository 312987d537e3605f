"""Exceptions raised by the data-driven LQR library and their exit codes."""

from __future__ import annotations

from typing import (Any, Optional)


class DDLQRError(Exception):
    """Base class for all errors raised by this package."""

    exit_code: int = 3

    def __init__(self, message: str, history: Optional[Any] = None):
        """Create an error, optionally carrying the partial iterate history."""
        super().__init__(message)
        self.history = history


class ConfigError(DDLQRError):
    """Bad command line arguments or configuration file."""

    exit_code = 1


class NotInformativeError(DDLQRError):
    """The collected data do not satisfy the rank conditions."""

    exit_code = 2


class SolverError(DDLQRError):
    """A numerical method failed."""

    exit_code = 3


class UnstableError(SolverError):
    """A gain or closed loop that must be Hurwitz is not."""


class DivergenceError(SolverError):
    """A trajectory or iterate left every reasonable bound."""


class CareError(SolverError):
    """The Riccati equation has no stabilizing solution we can compute."""


class DegenerateError(SolverError):
    """An optimizer cannot be mapped back to a gain."""


class FeasibilityError(SolverError):
    """A data matrix G left the affine set Xtilde G = I."""


class RankError(ValueError):
    """A matrix argument does not have the required rank."""


class ShapeError(ValueError):
    """Matrix arguments have inconsistent dimensions."""
