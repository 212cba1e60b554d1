"""Exception types shared across the package."""

from __future__ import annotations


class IdeoTraceError(Exception):
    """Base class for all package errors."""


class DataFormatError(IdeoTraceError, ValueError):
    """A malformed or invalid record in an input file."""

    def __init__(self, message: str, path: str | None = None, lineno: int | None = None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}"
        if lineno is not None:
            where = f"{where}:{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class DivergedError(IdeoTraceError, ArithmeticError):
    """Raised when a loss or gradient stops being finite.

    ``state`` holds the last parameters for which everything was finite,
    or None when there is no such state.
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
