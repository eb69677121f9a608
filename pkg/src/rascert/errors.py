"""Exception types shared across the package."""


class RasError(Exception):
    """Base class for all package errors."""


class ConfigError(RasError, ValueError):
    """Invalid configuration: unknown ids, violated parameter ranges."""


class ShapeError(RasError, ValueError):
    """Array or network shapes that do not chain."""


class DomainError(RasError, ValueError):
    """A state was evaluated outside the bounded domain."""


class SpecError(RasError, ValueError):
    """The specification and the verification grid do not fit together."""


class NumericalError(RasError, ArithmeticError):
    """Non-finite values produced during integration."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
