"""Exception hierarchy shared by every module of the package."""


class FuncExtremileError(Exception):
    """Base class for all package errors."""


class GridMismatchError(FuncExtremileError, ValueError):
    """Two curves (or a curve and a sample) live on different grids."""


class DataError(FuncExtremileError, ValueError):
    """Malformed or non-finite input data."""


class InsufficientSampleError(FuncExtremileError, ValueError):
    """Too few observations for the requested computation."""


class EmptyNeighborhoodError(FuncExtremileError, ValueError):
    """Every kernel weight vanished at the requested bandwidth."""


class SelectionError(FuncExtremileError, RuntimeError):
    """No candidate bandwidth produced a finite selection criterion."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CampaignError(FuncExtremileError, RuntimeError):
    """A Monte Carlo campaign lost too many repetitions to be reported."""
