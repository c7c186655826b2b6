"""Exception hierarchy shared across the package."""


class NTCError(Exception):
    """Base class for all package errors."""


class DimensionError(NTCError, ValueError):
    pass


class NumericError(NTCError, ArithmeticError):
    pass


class DomainError(NumericError):
    pass


class EmptySequenceError(NTCError, ValueError):
    pass


class ParameterError(NTCError, ValueError):
    pass


class LabelError(NTCError, ValueError):
    pass


class StateError(NTCError, RuntimeError):
    """Raised when a forward cache is consumed twice."""


class IngestionError(NTCError, ValueError):
    pass


class StratificationError(NTCError, ValueError):
    pass


class EmptyTextError(NTCError, ValueError):
    pass


class ConfigError(NTCError, ValueError):
    pass


class CheckpointError(NTCError, ValueError):
    pass


class DivergenceError(NTCError, RuntimeError):
    def __init__(self, message: str, checkpoint: str | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint
