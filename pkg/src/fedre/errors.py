"""Exception types shared across the package."""


class FedreError(Exception):
    """Base class for all package errors."""


class ShapeError(FedreError, ValueError):
    """Input or parameter shapes do not compose."""


class NumericError(FedreError, ArithmeticError):
    """A computation produced a non-finite value."""


class FormatError(FedreError, ValueError):
    """A binary file could not be parsed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(FedreError, ValueError):
    """Invalid experiment configuration; ``line`` is set for file errors."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
