"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model or distribution parameter violates its contract."""


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value where a finite one is required."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class PreconditionError(ValueError):
    """A verification routine was called outside the regime its inequality covers."""
