"""Exception types raised across the package."""

from __future__ import annotations


class MetaError(Exception):
    """Base class for all package errors."""


class ParameterError(MetaError, ValueError):
    """Invalid distribution or estimator parameters."""


class DomainError(MetaError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ValidationError(MetaError, ValueError):
    """A study summary or dataset fails its invariants.

    ``index`` is the 0-based study position (None for dataset-level
    problems) and ``field`` the offending attribute name.
    """

    def __init__(self, message: str, index: int | None = None, field: str | None = None):
        super().__init__(message)
        self.index = index
        self.field = field


class NumericError(MetaError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class DegenerateMatchError(NumericError):
    """Two-moment F matching has no solution with finite variance."""


class ConfigError(MetaError, ValueError):
    """Malformed simulation grid configuration."""
