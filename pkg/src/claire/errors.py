"""Exception types shared across the package.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericalError`` to exit code 3.
"""


class ClaireError(Exception):
    pass


class ConfigError(ClaireError, ValueError):
    """Invalid configuration or parameter combination."""


class InvalidInputError(ClaireError, ValueError):
    """Input data violates a precondition (shape, range, emptiness)."""


class NumericalError(ClaireError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class EmptyReportError(ClaireError, ValueError):
    """Evaluation was requested on an empty dataset."""
