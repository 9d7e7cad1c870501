"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid construction parameter (non-positive size, bad resolution, ...)."""


class MeshError(ValueError):
    """Mesh fails a structural requirement (open boundary, non-manifold, parse error)."""


class DomainError(ValueError):
    """Field violates a mathematical hypothesis (e.g. positivity) of an operation."""


class TruncationError(RuntimeError):
    """Spectral truncation too small for the requested evaluation."""


class EigensolverError(RuntimeError):
    """Sparse eigensolver failed to converge; carries residual info."""


class CflError(RuntimeError):
    """Explicit flow step exceeds the stability limit."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class ExtinctionError(RuntimeError):
    """Ricci flow stepped into the extinction/blow-up regime (min R <= 0 or R -> inf)."""


class ConfigError(ValueError):
    """Experiment configuration is syntactically or semantically invalid."""
