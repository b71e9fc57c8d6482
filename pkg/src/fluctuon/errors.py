"""Exception hierarchy shared across the package."""


class FluctuonError(Exception):
    """Base class for all package errors."""


class ConfigError(FluctuonError, ValueError):
    """Invalid or inconsistent run configuration."""


class AccuracyError(FluctuonError, ArithmeticError):
    """A numerical routine could not reach its requested accuracy.

    Parameters
    ----------
    message : str
        Human readable description.
    estimate : float or ndarray, optional
        Best estimate available when the routine gave up.
    error : float, optional
        Error estimate attached to ``estimate``.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class QuadratureError(AccuracyError):
    """Adaptive quadrature failed to converge."""


class IntegrationError(AccuracyError):
    """ODE step control failed."""


class ConvergenceError(FluctuonError, RuntimeError):
    """An iterative optimiser did not converge."""


class DatasetError(FluctuonError, ValueError):
    """Malformed or invalid experimental dataset."""
