"""Exception types shared across the package."""


class PanoDepthError(Exception):
    """Base class for package errors."""


class DataError(PanoDepthError, ValueError):
    """Malformed, missing or inconsistent input data."""


class NumericError(PanoDepthError, ArithmeticError):
    """Non-finite values or a failed numerical check."""
