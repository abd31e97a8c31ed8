"""Exception types raised across the package."""


class PlatoonError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(PlatoonError):
    pass


class DimensionMismatch(PlatoonError, ValueError):
    pass


class DomainError(PlatoonError, ValueError):
    pass


class TrainingDiverged(PlatoonError):
    pass


class SeriesTooShort(PlatoonError, ValueError):
    pass


class SolverFailure(PlatoonError):
    """Raised when the QP cannot be solved even with softened constraints."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class MalformedLog(PlatoonError, ValueError):
    pass
