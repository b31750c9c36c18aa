"""Exception hierarchy shared across the package."""


class DeadlyHeatError(Exception):
    """Base class for all package errors."""


class DataError(DeadlyHeatError, ValueError):
    """Input data violates a format or content rule."""


class UnimputableError(DataError):
    """A missing value has no history to be imputed from."""


class InsufficientDataError(DataError):
    """Not enough observations for the requested operation."""


class ConvergenceError(DeadlyHeatError, RuntimeError):
    """An iterative fit failed to converge or produced non-finite values."""


class DivergenceError(DeadlyHeatError, FloatingPointError):
    """Non-finite activations, losses or gradients during training."""


class LeakageError(DeadlyHeatError):
    """A read crossed the information boundary of the current step."""


class ConfigError(DeadlyHeatError, ValueError):
    """A run configuration is missing, malformed or has unknown keys."""
