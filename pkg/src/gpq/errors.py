"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so library code should raise the most
specific class available rather than a bare ``ValueError``.
"""


class GpqError(Exception):
    """Base class for all library errors."""


class InvalidArgument(GpqError, ValueError):
    """A caller supplied inconsistent shapes or out-of-range values."""


class DataError(GpqError, ValueError):
    """Input data (CSV, JSON, config) violates its documented schema."""

    def __init__(self, message, *, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class WindowError(DataError):
    """Not enough history for a requested estimation window."""


class NumericalFailure(GpqError, ArithmeticError):
    """A factorization or iteration broke down.

    ``jitter`` carries the last diagonal jitter tried (when relevant) and
    ``position`` the offending point for samplers.
    """

    def __init__(self, message, *, jitter=None, position=None):
        self.jitter = jitter
        self.position = position
        super().__init__(message)


class NonConvergence(NumericalFailure):
    """An iterative solver hit its iteration cap.

    The last iterate and residuals are attached so callers can decide
    whether the answer is usable anyway.
    """

    def __init__(self, message, *, result=None):
        self.result = result
        super().__init__(message)
