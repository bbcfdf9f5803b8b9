"""Exception types shared across the package."""


class TopGraphError(Exception):
    """Base class for package errors."""


class DataError(TopGraphError, ValueError):
    """Malformed or inconsistent input data.

    ``line`` carries the 1-based line number when the error comes from a
    text document.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConvergenceError(TopGraphError, RuntimeError):
    """An iterative routine hit its iteration bound."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
