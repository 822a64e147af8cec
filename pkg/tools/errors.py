"""
Error types shared by every tool module.

The CLI maps each family to an exit code:
  UsageError -> 2, DataError -> 3, NumericError -> 4.
"""

from typing import Sequence


class TVineError(Exception):
    """Base class for every error raised by the tools package."""

    exit_code = 1


class UsageError(TVineError):
    """Invalid command-line usage or configuration."""

    exit_code = 2


class DomainError(TVineError, ValueError):
    """A numeric argument lies outside the domain of an operation."""

    exit_code = 2


class DataError(TVineError):
    """Malformed or degenerate input data."""

    exit_code = 3


class ZeroVarianceError(DataError):
    """A column has zero sample variance."""

    def __init__(self, column: str):
        super().__init__(f"Column '{column}' has zero variance")
        self.column = column


class ModelFormatError(DataError):
    """A serialized model document is malformed or has the wrong schema."""


class NumericError(TVineError):
    """A numerical routine failed (non-convergence, rank deficiency, ...)."""

    exit_code = 4


class RankDeficiencyError(NumericError):
    """The regression design matrix is not of full column rank."""

    def __init__(self, columns: Sequence[int]):
        cols = sorted(int(c) for c in columns)
        super().__init__(f"Design matrix is rank deficient; collinear columns: {cols}")
        self.columns = cols
