"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Any


class DmlError(Exception):
    """Base class for all package errors."""


class ConfigError(DmlError, ValueError):
    """Invalid user input or configuration (CLI exit code 2)."""


class NumericalError(DmlError, ArithmeticError):
    """Numerical failure during estimation (CLI exit code 3)."""


class DivisibilityError(ConfigError):
    pass


class InvalidK(ConfigError):
    pass


class InvalidParam(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class InvalidDataset(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class UnknownRole(ConfigError, KeyError):
    pass


class EmptyTrainSet(ConfigError):
    pass


class InsufficientDraws(ConfigError):
    pass


class RankDeficiency(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class DegenerateFold(NumericalError):
    """All weights on a fold are zero, so the weighted moment is identically 0."""


class NonConvergence(NumericalError):
    """Solver hit ``max_iters`` without meeting the tolerance.

    ``best`` holds the best iterate seen along the path.
    """

    def __init__(self, message: str, best: Any = None) -> None:
        super().__init__(message)
        self.best = best
