"""Preconditioned gradient descent laboratory."""
from .errors import (DivergenceError, IngestionError, NumericalError, PrecondLabError,
                     SingularityError, ValidationError)

__version__ = "0.1.0"
