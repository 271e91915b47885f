"""Exception hierarchy shared by all singlab modules."""

from __future__ import annotations


class SinglabError(Exception):
    """Base class for every error raised by singlab."""


class DomainError(SinglabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PrecisionError(SinglabError, ValueError):
    """Requested construction cannot be represented in double precision."""

    def __init__(self, message: str, max_safe_generation: int):
        super().__init__(message)
        self.max_safe_generation = max_safe_generation


class DimensionMismatchError(SinglabError, ValueError):
    pass


class InsufficientScalesError(SinglabError, ValueError):
    pass


class InsufficientDataError(SinglabError, ValueError):
    pass


class EmptyShellError(SinglabError, RuntimeError):
    pass


class ConsistencyError(SinglabError, RuntimeError):
    """Internal numerical evidence contradicts a guaranteed property."""


class ConvergenceError(SinglabError, RuntimeError):
    def __init__(self, message: str, residual_history: list[float]):
        super().__init__(message)
        self.residual_history = residual_history


class InputError(SinglabError, ValueError):
    """Precondition on the inputs of an operation was violated."""

    def __init__(self, message: str, offending=None):
        super().__init__(message)
        self.offending = offending


class ConfigError(SinglabError, ValueError):
    pass
