"""Exception types shared across the package."""


class AbrisError(Exception):
    """Base class for all package errors."""


class InputError(AbrisError, ValueError):
    """Invalid argument shape or value."""


class NumericalError(AbrisError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid number."""


class StateError(AbrisError, RuntimeError):
    """An operation was called on an object in an unusable state."""


class UnsupportedFamilyError(AbrisError, TypeError):
    """The operation is not defined for the given variational family."""


class ConfigError(AbrisError, ValueError):
    """Invalid or inconsistent configuration."""


class ModelEvaluationError(AbrisError, RuntimeError):
    """The forward model failed on one or more inputs.

    Attributes:
        rows (list[int]): Indices of the failed rows.
    """

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class BudgetExhausted(AbrisError, RuntimeError):
    """The model-call budget was reached before the run finished."""


class TemperingError(AbrisError, RuntimeError):
    """The adaptive tempering bisection could not find a next exponent."""
