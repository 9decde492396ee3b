"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation/domain failures exit 1,
problem-file parse failures exit 2, solver non-convergence exit 3.
"""


class QotError(Exception):
    """Base class for all package errors."""


class ValidationError(QotError, ValueError):
    """Structured input violates a stated invariant (shapes, Hermiticity, jump data)."""


class DomainError(QotError, ValueError):
    """Value outside the mathematical domain of an operation (singular density, t < 0, ...)."""


class StructuralError(QotError, RuntimeError):
    """A structural hypothesis fails (non-ergodic generator, singular reduced system)."""


class ConvergenceError(QotError, RuntimeError):
    """An iterative routine failed to meet its tolerance contract."""


class ProblemFormatError(QotError, ValueError):
    """A problem file cannot be parsed into a valid problem description."""
