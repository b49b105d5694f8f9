"""Exception types shared across the package.

The CLI maps these onto exit codes: ``InputError`` -> 2,
``NumericalError`` -> 3.
"""


class InputError(ValueError):
    """Rejected input: unknown ids, malformed files, invalid configs."""


class NumericalError(ArithmeticError):
    """A computation failed numerically (non-PD matrix, integration failure)."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class IntegrationError(NumericalError):
    """Optimality indices did not sum to one within tolerance."""
