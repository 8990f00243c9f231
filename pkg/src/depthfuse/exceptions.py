"""Exception types raised by depthfuse."""


class DepthFuseError(Exception):
    """Base class for all depthfuse errors."""


class DomainError(DepthFuseError, ValueError):
    """Input values outside the mathematical domain of an operation."""


class PFMError(DepthFuseError, OSError):
    """Malformed or truncated PFM file.

    The byte offset at which parsing failed is stored in ``offset``.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SolverError(DepthFuseError, RuntimeError):
    """Numerical failure inside one of the fusion solvers."""
