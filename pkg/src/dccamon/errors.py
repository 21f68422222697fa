class DccamonError(Exception):
    """Base class for all package errors."""


class ShapeError(DccamonError, ValueError):
    pass


class ConfigError(DccamonError, ValueError):
    pass


class InsufficientDataError(DccamonError, ValueError):
    pass


class DegenerateWindowError(DccamonError, ArithmeticError):
    """A covariance block is singular (or nearly so) after regularisation."""


class DivergenceError(DccamonError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class ArtifactError(DccamonError):
    """An upstream artifact is missing, incomplete or produced by another config."""
