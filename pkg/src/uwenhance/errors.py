"""Exception hierarchy shared across the package."""


class UWError(Exception):
    """Base class for all package errors."""


class ShapeError(UWError, ValueError):
    pass


class BroadcastError(ShapeError):
    pass


class ContractError(UWError, ValueError):
    """An operation was called outside its documented preconditions."""


class NumericError(UWError, ArithmeticError):
    pass


class SymmetryError(UWError, ValueError):
    """A spectrum that should be conjugate-symmetric is not."""


class ConfigError(UWError, ValueError):
    def __init__(self, message, key_path=None):
        super().__init__(message if key_path is None else f"{key_path}: {message}")
        self.reason = message
        self.key_path = key_path


class FormatError(UWError, ValueError):
    """Malformed file on disk (PPM, SSTF)."""
