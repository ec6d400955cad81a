"""Exception types shared across the package."""


class SteadymixError(Exception):
    """Base class for all package errors."""


class DomainError(SteadymixError):
    """A constitutive or norm evaluation left its mathematical domain
    (log or negative power of a non-positive quantity)."""


class ClosureError(SteadymixError):
    """A diffusion matrix or reaction-rate closure failed validation."""


class ConfigError(SteadymixError):
    """Invalid configuration value or malformed config file."""


class NonConvergence(SteadymixError):
    """Newton iteration exhausted max_iter without meeting the tolerance."""

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class LinearSolveFailure(SteadymixError):
    """Sparse factorization / linear solve failed (singular Jacobian)."""


class PathStalled(SteadymixError):
    """Continuation could not advance even after bisecting the parameter step."""
