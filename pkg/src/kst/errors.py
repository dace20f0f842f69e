"""Exception types shared across the package."""

from __future__ import annotations


class KstError(Exception):
    """Input or contract violation. The CLI maps these to exit code 2."""


class ParseError(KstError):
    """Malformed input record; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
