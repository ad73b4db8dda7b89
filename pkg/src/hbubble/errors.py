class HBubbleError(Exception):
    """Base class for all package errors."""


class ConfigError(HBubbleError, ValueError):
    """Invalid configuration or argument."""


class EvaluationError(HBubbleError, ArithmeticError):
    """A scalar field produced a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class RetractionError(HBubbleError, ArithmeticError):
    """Volume retraction impossible (degenerate or wrong-signed volume)."""


class DegenerateConstraintError(HBubbleError, ArithmeticError):
    """The volume constraint has a vanishing gradient."""


class SolverError(HBubbleError, RuntimeError):
    """Linear solve failed; carries the residual norm."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
