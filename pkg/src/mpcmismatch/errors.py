"""Exception types raised across the package."""


class MpcMismatchError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MpcMismatchError, ValueError):
    """Arguments violate a documented precondition."""


class DivisionDomainError(MpcMismatchError, ArithmeticError):
    """A denominator evaluated to zero where it must be positive."""


class NumericalOverflowError(MpcMismatchError, ArithmeticError):
    """A computation produced a non-finite value."""


class NoSolutionError(MpcMismatchError):
    """A linear system or equation has no (unique) solution."""


class UnsupportedError(MpcMismatchError):
    """The requested routine does not support the given problem size."""


class InfeasibleStartError(MpcMismatchError):
    """The optimal control problem is infeasible at the initial state."""


class InconclusiveError(MpcMismatchError):
    """Not enough data to reach a verdict."""
