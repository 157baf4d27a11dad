"""Exception hierarchy shared by all modules.

The CLI maps :class:`DataError` to exit code 2 and :class:`ModelError` to
exit code 3.
"""

from __future__ import annotations


class GreedyRestartError(Exception):
    """Base class for all package errors."""


class DataError(GreedyRestartError, ValueError):
    """Invalid or incomplete input data (malformed files, missing cells)."""

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class MissingCellError(DataError):
    """An (algorithm, problem) pair has no runs."""

    def __init__(self, algorithm: str, problem):
        self.algorithm = algorithm
        self.problem = problem
        super().__init__(f"no runs for algorithm {algorithm!r} on problem {problem}")


class ModelError(GreedyRestartError, ArithmeticError):
    """The performance model cannot produce a finite answer."""
