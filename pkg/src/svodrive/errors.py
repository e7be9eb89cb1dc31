"""Exception types shared across the package."""


class SvoDriveError(Exception):
    """Base class for all package errors."""


class InputDomainError(SvoDriveError, ValueError):
    """An argument lies outside its documented domain."""


class StructuralError(SvoDriveError, ValueError):
    """Shapes, lengths or modes of inputs are inconsistent."""


class ConfigError(SvoDriveError, ValueError):
    """A configuration file or scenario parameter set is invalid."""


class SpawnError(SvoDriveError, RuntimeError):
    """Agent placement failed; carries a partial diagnostic."""

    def __init__(self, message: str, placed: int = 0, requested: int = 0):
        super().__init__(message)
        self.placed = placed
        self.requested = requested


class TrainingError(SvoDriveError, RuntimeError):
    """Optimization diverged or produced non-finite values."""
