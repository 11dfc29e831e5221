"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: schema/parse/usage problems are the
caller's fault (exit 2), estimation-time failures are exit 3.
"""


class DmlmedError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(DmlmedError):
    """CSV header or role map does not match expectations."""


class ParseError(DmlmedError):
    """A CSV cell could not be parsed as a finite number.

    ``row`` is the 1-based data row index (the header does not count),
    ``column`` the offending column name.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(DmlmedError):
    """Input lies outside the mathematical domain of an operation."""


class UsageError(DmlmedError):
    """An operation was called with arguments that violate its contract."""


class FitError(DmlmedError):
    """A regression learner could not be fitted."""


class SolverError(DmlmedError):
    """The final-stage linear system is degenerate or unsolvable."""


class InferenceError(DmlmedError):
    """A test statistic could not be computed (e.g. underpopulated bins)."""


class SimulationError(DmlmedError):
    """A Monte Carlo run failed (too many replication errors)."""
