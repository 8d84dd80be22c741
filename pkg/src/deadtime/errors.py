"""Exception hierarchy for the deadtime package."""


class DeadTimeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidIntervalError(DeadTimeError, ValueError):
    pass


class DegenerateModelError(DeadTimeError, ValueError):
    """The scene has zero total flux, so no density can be formed."""


class InsufficientDataError(DeadTimeError, ValueError):
    pass


class CapacityError(DeadTimeError, MemoryError):
    """A dense transition matrix would exceed the configured size cap."""


class UnsupportedModeError(DeadTimeError, ValueError):
    pass


class ConvergenceError(DeadTimeError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    The last residual is kept on the exception so callers can decide
    whether the partial result is usable.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateResultError(DeadTimeError, ValueError):
    pass


class ConfigError(DeadTimeError, ValueError):
    pass
