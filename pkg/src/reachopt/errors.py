"""Exception types raised across the package."""


class ReachError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(ReachError, ValueError):
    """An argument has the wrong shape, is non-finite, or is inconsistent."""


class DomainError(ReachError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalOverflowError(ReachError, ArithmeticError):
    """A propagation step produced a non-finite result."""


class InfeasibleTaskError(ReachError):
    """The reach target cannot be attained by the arm geometry."""


class DegenerateDesignError(ReachError, ValueError):
    """A regression design has no spread in its regressor."""


class DivergenceError(ReachError):
    """A simulated state left the admissible joint range."""


class EmptySweepError(ReachError):
    """Every trial of a sweep failed."""
