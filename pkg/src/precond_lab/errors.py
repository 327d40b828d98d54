"""Exception hierarchy shared by every module of the lab."""


class PrecondLabError(Exception):
    """Base class for all errors raised by precond_lab."""


class ValidationError(PrecondLabError, ValueError):
    """Bad shapes, out-of-range hyperparameters, malformed input."""


class IngestionError(ValidationError):
    """A data or config file could not be read."""


class NumericalError(PrecondLabError, ArithmeticError):
    """A computation failed to produce a finite, trustworthy result."""


class SingularityError(NumericalError):
    """Matrix is singular (or numerically so) where definiteness is required."""

    def __init__(self, message, lambda_min=None, lambda_max=None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


class DivergenceError(NumericalError):
    """An optimization run blew up; ``record`` holds the rows kept so far."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
