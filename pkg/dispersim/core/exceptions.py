"""
Custom exceptions for the dispersim package.
"""


class DispersimError(Exception):
    """Base exception for all simulator and verification errors."""
    pass


class ConfigurationError(DispersimError):
    """Raised when a grid, exponent, pair or experiment file is invalid."""
    pass


class CommensurabilityError(ConfigurationError):
    """Raised when a velocity is not on the lattice (2*pi/L) Z^n."""

    def __init__(self, message: str, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class ModelValidationError(ConfigurationError):
    """Raised when a charge transfer model fails a structural check."""
    pass


class GridMismatchError(DispersimError):
    """Raised when fields living on different grids are combined."""
    pass


class ContractError(DispersimError):
    """Raised when an argument violates an operation's contract."""
    pass


class InsufficientDataError(DispersimError):
    """Raised when a trajectory or sample set is too short to evaluate."""
    pass


class FitError(DispersimError):
    """Raised when a decay fit cannot be performed."""
    pass


class ConvergenceError(DispersimError):
    """Raised when an eigensolver fails to reach its residual tolerance."""

    def __init__(self, message: str, residual: float = float('nan')):
        super().__init__(message)
        self.residual = residual


class NearThresholdError(DispersimError):
    """Raised when a localized eigenvalue lies inside (-gap_tol, 0)."""

    def __init__(self, message: str, eigenvalue: float = float('nan')):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class PreparationError(DispersimError):
    """Raised when a scattering state cannot be prepared."""
    pass


class HorizonError(DispersimError):
    """Raised when a requested horizon leaves the wrap-safe window."""
    pass


class PropagationError(DispersimError):
    """Raised when a propagation produces non-finite values."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class InstabilityError(PropagationError):
    """Raised when the matrix flow norm grows beyond the instability bound."""
    pass


class SnapshotFormatError(DispersimError):
    """Raised when a snapshot file cannot be read."""
    pass
