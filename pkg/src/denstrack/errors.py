"""Exception types raised by denstrack."""


class DensTrackError(Exception):
    """Base class for all library errors."""


class DomainError(DensTrackError, ValueError):
    """An argument lies outside the domain of an operation."""


class EllipticityError(DomainError):
    """The diffusion matrix is singular (or not positive definite) somewhere it is needed."""


class PreconditionError(DomainError):
    """A documented precondition of an operation does not hold."""


class ShapeError(DensTrackError, ValueError):
    """Two grid objects that must share a grid do not."""


class FormatError(DensTrackError, ValueError):
    """A file does not follow the expected CSV layout."""


class ConfigError(DensTrackError, ValueError):
    """A run configuration is invalid; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ResolutionError(DomainError):
    """The grid is too coarse for the requested computation."""


class UnsupportedError(DensTrackError, NotImplementedError):
    """The requested combination of inputs has no implementation."""


class NumericalError(DensTrackError, ArithmeticError):
    """A computation produced non-finite values."""
