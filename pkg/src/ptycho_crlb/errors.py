"""Exception types raised by the package."""


class PtychoError(Exception):
    """Base class for all package errors."""


class InputError(PtychoError, ValueError):
    """Invalid numerical input (negative means, mismatched geometry, ...)."""


class PlacementError(InputError):
    """A probe placement falls outside the object grid."""


class ConfigError(PtychoError, ValueError):
    """Malformed or inconsistent scenario configuration."""


class NumericalError(PtychoError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""
