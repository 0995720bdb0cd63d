"""Exception types shared across the package."""


class DtnCacheError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(DtnCacheError, ValueError):
    """An argument lies outside the model's domain."""


class ConfigurationError(DtnCacheError, ValueError):
    """A configuration cannot be realized (e.g. caches cannot be filled)."""


class NumericalFailureError(DtnCacheError, ArithmeticError):
    """An iterative numerical routine failed to converge.

    Attributes
    ----------
    detail : dict
        Diagnostic state at the point of failure (e.g. the final bracket).
    """

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail
