from typing import Optional


class ParasentError(Exception):
    """Base class for every error raised by the library."""


class DataError(ParasentError, ValueError):
    """Problem with user-supplied data, optionally tied to an input line."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class FormatError(DataError):
    """Malformed text input."""


class EmptyInputError(DataError):
    """An input stream or token sequence had nothing in it."""


class ModelFormatError(DataError):
    """A saved model bundle is inconsistent or from another format version."""


class DegenerateError(ParasentError, ArithmeticError):
    """Zero-norm vectors or zero-variance data where a ratio is required."""


class NumericError(ParasentError, ArithmeticError):
    """A loss, gradient or parameter became non-finite."""


class ContractError(ParasentError, ValueError):
    """Shapes or modes that do not fit together."""


class DomainError(ParasentError, ValueError):
    """An argument outside the range where the operation is defined."""


class ConfigError(ParasentError, ValueError):
    """Invalid configuration, config file or grid file."""
