"""Exception types shared across the package."""

from __future__ import annotations


class GgutError(Exception):
    """Base class for all package errors."""


class SingularDensityError(GgutError):
    """rho(1 - rho) has an eigenvalue too close to 0 or 1 to invert."""


class NonConvergence(GgutError):
    """An iterative procedure hit its iteration cap.

    Attributes:
        history: residual trace (loop) or best residual (Lanczos).
    """

    def __init__(self, message: str, history=None, best_residual: float | None = None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.best_residual = best_residual


class EmptyBasis(GgutError):
    """No sampled determinant survived post-selection."""


class ConfigError(GgutError):
    """Invalid run configuration."""
