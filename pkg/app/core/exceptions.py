"""
Custom exceptions and exit-status handlers for the command line.
"""
import logging
import sys

from pydantic import ValidationError

logger = logging.getLogger(__name__)

# Exit statuses
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_SCHEMA = 2
EXIT_NUMERIC_BUDGET = 3
EXIT_REFUSAL = 4


class KDiffError(Exception):
    """Base exception for all library errors."""
    pass


class SchemaError(KDiffError, ValueError):
    """Malformed document or invalid input value."""
    pass


class GluingError(SchemaError):
    """Inconsistent polygon gluing, cone angle or mark."""
    pass


class SingularPointError(KDiffError, ValueError):
    """A point expected to be regular is a singularity."""
    pass


class RegularPointError(KDiffError, ValueError):
    """A point expected to be a singularity is regular."""
    pass


class NumericBudgetError(KDiffError):
    """A length, step or restart budget ran out."""
    pass


class IntegrationError(NumericBudgetError):
    """Path integration or ODE continuation failed."""
    pass


class DecompositionError(NumericBudgetError):
    """CUT construction or tiling did not complete."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class RefusalError(KDiffError):
    """Input outside the range where a construction is known to exist."""
    pass


class RenderError(SchemaError):
    """Scene cannot be rendered."""
    pass


def exit_status_for(exc: BaseException) -> int:
    """Map an exception to the command-line exit status."""
    if isinstance(exc, (SchemaError, ValidationError)):
        return EXIT_SCHEMA
    if isinstance(exc, NumericBudgetError):
        return EXIT_NUMERIC_BUDGET
    if isinstance(exc, RefusalError):
        return EXIT_REFUSAL
    return EXIT_FAILURE


def handle_exception(exc: BaseException) -> int:
    """Report an exception on stderr and return its exit status."""
    status = exit_status_for(exc)
    if isinstance(exc, ValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(part) for part in first.get("loc", ()))
        message = f"schema error at '{field}': {first.get('msg', str(exc))}"
    elif status == EXIT_FAILURE:
        logger.exception("Unexpected error")
        message = f"internal error: {exc}"
    else:
        message = str(exc)
    print(f"kdiff: {message}", file=sys.stderr)
    return status
