"""Exception and warning classes used across the package."""


class SimfexError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(SimfexError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class EstimationError(SimfexError):
    """A statistical estimate could not be computed from the data."""


class NumericalError(SimfexError, ArithmeticError):
    """A numerical routine failed or produced an unusable result."""


class DataError(SimfexError, ValueError):
    """Input data is malformed, incomplete or inconsistent."""


class ConfigError(SimfexError, ValueError):
    """A run configuration is invalid."""


class EstimationWarning(UserWarning):
    """An estimate was computed but needed an adjustment (flooring, clipping)."""
