"""Exception types shared across the package."""


class PlatecheckError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PlatecheckError, ValueError):
    """An argument violates a documented precondition."""


class BoundaryProximityError(PlatecheckError):
    """Target point too close to the image of the domain boundary.

    Carries the measured margin so callers can perturb and retry.
    """

    def __init__(self, message, margin):
        super().__init__(message)
        self.margin = float(margin)


class IrregularValueError(PlatecheckError):
    """Target point has a preimage simplex with near-singular gradient."""


class InconsistencyError(PlatecheckError):
    """An internal cross-check failed (e.g. winding residual too large)."""


class EmptyRegionError(PlatecheckError):
    """A requested subregion contains no simplices."""


class UnsupportedMeshError(PlatecheckError):
    """Operation requires mesh structure (e.g. layering) that is absent."""


class SingularParametrizationError(PlatecheckError):
    """Degenerate surface normal or parametrization."""


class DegenerateTruncationError(PlatecheckError):
    """Every simplex exceeded the truncation threshold."""
