class FrofaError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FrofaError, ValueError):
    """Bad shapes, out-of-range parameters or malformed configuration."""


class CacheFormatError(FrofaError):
    """A feature cache file is malformed or truncated."""


class TrainingDiverged(FrofaError):
    """The training loss became NaN or infinite."""
