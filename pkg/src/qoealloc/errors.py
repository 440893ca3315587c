"""Exception hierarchy shared across the package."""

from __future__ import annotations


class QoeAllocError(Exception):
    """Base class for all package errors."""


class DomainError(QoeAllocError, ValueError):
    """An input lies outside the domain of a model or function."""


class OutOfRangeError(DomainError):
    """A value lies outside a tabulated range (delay curve, grid index)."""


class ConfigError(QoeAllocError, ValueError):
    """A configuration input is missing or malformed."""


class GridBuildError(QoeAllocError):
    """A utility model failed while a grid was being evaluated."""


class GridLoadError(QoeAllocError, ValueError):
    """A grid file could not be parsed or violates grid invariants."""


class InfeasibleError(QoeAllocError):
    """No assignment satisfies the allocation constraints.

    ``binding`` names the first constraint class found to be binding:
    ``"path"``, ``"capacity"`` or ``"delay"``.
    """

    def __init__(self, message: str, binding: str, details: list[str] | None = None):
        super().__init__(message)
        self.binding = binding
        self.details = list(details or [])


class OracleBudgetError(QoeAllocError):
    """The exhaustive oracle refuses an instance whose search space is too large."""

    def __init__(self, size: int, budget: int):
        super().__init__(f"search space {size} exceeds oracle budget {budget}")
        self.size = size
        self.budget = budget


class ScenarioError(QoeAllocError, ValueError):
    """A scenario file failed to parse or validate."""


class DataIOError(QoeAllocError, OSError):
    """A scenario, allocation or report file could not be read or written."""
