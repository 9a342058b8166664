"""Exception types that map onto the command-line exit codes."""
from .ops import NonFiniteError, ShapeError


class DataError(ValueError):
    """Missing, unreadable or inconsistent input data."""


class UsageError(ValueError):
    """Invalid option or option combination."""


class CheckpointError(DataError):
    pass


__all__ = ["CheckpointError", "DataError", "NonFiniteError", "ShapeError", "UsageError"]
