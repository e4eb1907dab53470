"""Exception types raised across the package."""


class GratingError(Exception):
    """Base class for all package errors."""


class ResonanceError(GratingError):
    """Raised when a Rayleigh mode sits on (or too near) a Wood anomaly."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class GeometryError(GratingError):
    pass


class ConfigError(GratingError):
    pass


class DegenerateElementError(GratingError):
    pass


class OutOfDomainError(GratingError):
    pass


class SingularMatrixError(GratingError):
    pass


class NoConvergenceError(GratingError):
    """Iterative solve stopped above tolerance; ``best_residual`` holds the last residual."""

    def __init__(self, message, best_residual=float("nan"), solution=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.solution = solution


class TruncationTooSmallError(GratingError):
    pass


class AllZeroError(GratingError):
    pass


class PlaneNotConformingError(GratingError):
    pass
