"""Exception types raised across the package."""


class InputError(ValueError):
    """Invalid argument: wrong shape, out-of-range value, malformed file."""


class NumericalError(ArithmeticError):
    """A numerical routine produced a non-finite or non-positive-definite result."""
