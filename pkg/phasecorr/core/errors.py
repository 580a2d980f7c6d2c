"""
Exception hierarchy shared by the toolkit; each kind maps to a CLI exit code.
"""
from typing import Optional, Tuple


class PhaseCorrError(Exception):
    """Base class for toolkit errors."""
    exit_code = 1


class ValidationError(PhaseCorrError, ValueError):
    """Raised when a parameter lies outside its declared range."""
    exit_code = 2


class EmptyBinError(ValidationError):
    """Raised when a phase bin (or bin pair) holds no records."""

    def __init__(self, bin_index: Tuple[int, ...], message: Optional[str] = None):
        self.bin_index = tuple(int(i) for i in bin_index)
        super().__init__(message or f"Phase bin {self.bin_index} is empty")


class DatasetFormatError(PhaseCorrError, OSError):
    """Raised when a dataset file is missing, truncated or not PQDS."""
    exit_code = 3


class NumericalToleranceError(PhaseCorrError, ArithmeticError):
    """Raised when a quadrature or interpolation check exceeds its tolerance."""
    exit_code = 4


class BoundaryMassWarning(UserWarning):
    """Phase-space grid does not contain the bulk of the distribution."""
