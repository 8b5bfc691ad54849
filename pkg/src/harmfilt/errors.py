"""Exception hierarchy shared across the toolkit.

All domain failures derive from :class:`HarmfiltError` so the CLI can map
them to exit code 1 while genuine bugs still surface as tracebacks.
"""

from __future__ import annotations


class HarmfiltError(Exception):
    """Base class for all domain errors raised by this package."""


class CdfParseError(HarmfiltError):
    """Malformed IEEE common-data-format input."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ValidationError(HarmfiltError):
    """Input data violates a model invariant (missing slack, bad ids, ...)."""


class ConvergenceError(HarmfiltError):
    """An iterative solver failed to converge within its iteration cap."""


class SingularityError(HarmfiltError):
    """A matrix or circuit reduction is singular/degenerate."""
