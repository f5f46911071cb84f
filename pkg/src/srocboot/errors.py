"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SrocBootError(Exception):
    """Base class for all package errors."""


class DataError(SrocBootError, ValueError):
    """Malformed, inconsistent or unusable study data."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} at line {line}"
        super().__init__(message)
        self.line = line


class InsufficientStudiesError(DataError):
    """Fewer studies than a model or procedure needs."""


class ConvergenceError(SrocBootError, RuntimeError):
    """The REML optimizer failed to converge after all restarts."""

    def __init__(self, message: str, fit=None):
        super().__init__(message)
        self.fit = fit


class SrocUndefinedError(SrocBootError, ValueError):
    """The SROC curve cannot be formed from the given fit."""


class BudgetExceededError(SrocBootError, RuntimeError):
    """Too many bootstrap replicates failed to refit."""

    def __init__(self, message: str, failures=()):
        super().__init__(message)
        self.failures = list(failures)
