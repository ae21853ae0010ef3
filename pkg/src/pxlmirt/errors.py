"""Exception hierarchy shared by the library and the command-line front end."""


class PxlError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParameterError(PxlError, ValueError):
    """An argument is outside its admissible range."""

    exit_code = 2


class ConfigError(PxlError, ValueError):
    """A run configuration is inconsistent or incomplete."""

    exit_code = 2


class DataError(PxlError, ValueError):
    """Observed responses are malformed or do not match their item kinds."""

    exit_code = 3

    def __init__(self, message, row=None, col=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"column {col}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row, self.col, self.line = row, col, line


class NumericError(PxlError, ArithmeticError):
    """A numerical routine failed (singular matrix, overflow, non-convergence)."""

    exit_code = 4


class FallbackRequired(NumericError):
    """The tilting saddlepoint could not be solved; callers switch to Gibbs."""
