"""Shared exception types for the homogenization laboratory."""

from __future__ import annotations


class UnsupportedOperationError(RuntimeError):
    """Requested operation is not defined for this generator or mode."""


class BudgetError(RuntimeError):
    """A scale-resolved computation would exceed the configured point budget."""


class NonConvergenceError(RuntimeError):
    """An iterative solver stalled before reaching its tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvalidOperatorError(ValueError):
    """Operator fields violate a declared structure condition."""


class InvalidDensityError(ValueError):
    """Density failed the convexity probe."""


class TableRangeError(RuntimeError):
    """A gradient left the tabulated range of an effective model."""

    def __init__(self, xi):
        super().__init__(f"gradient {xi!r} outside the tabulated effective-model range")
        self.xi = xi


class ClippedMassError(RuntimeError):
    """Too much sample mass fell outside the declared value box."""
