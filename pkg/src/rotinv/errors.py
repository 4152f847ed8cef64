"""Exception types shared across the package."""


class RotinvError(Exception):
    """Base class for all package-specific errors."""


class NonSymmetricError(RotinvError):
    """Input matrix is not symmetric within tolerance."""


class NoConvergenceError(RotinvError):
    """Iterative eigensolver failed to reach its off-diagonal threshold."""


class NotPSDError(RotinvError):
    """Matrix has an eigenvalue below the negative clamping threshold."""


class NotPositiveDefiniteError(RotinvError):
    """Matrix (or a matrix in a sequence) has smallest eigenvalue below the
    positive-definiteness floor.

    Attributes
    ----------
    min_eigenvalue : float
        The offending smallest eigenvalue.
    index : int or None
        For sequences, the first failing position.
    """

    def __init__(self, message, min_eigenvalue=None, index=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
        self.index = index


class WindowTooSmallError(RotinvError):
    """Estimation window shorter than the process dimension."""


class GridMismatchError(RotinvError):
    """Operands live on different time grids."""


class MissingDriverError(RotinvError):
    """A driver path is required for this volatility kind but was not given."""


class EmptyMatrixListError(RotinvError):
    """A piecewise rotation policy needs at least one matrix."""


class LengthMismatchError(RotinvError):
    """Paired samples have different lengths."""


class TooFewSamplesError(RotinvError):
    """Sample size below the minimum for the statistical procedure."""


class HorizonTooShortError(RotinvError):
    """Too few paths completed the required number of exits before t_max."""


class ConfigInvalidError(RotinvError):
    """Experiment configuration failed validation."""
