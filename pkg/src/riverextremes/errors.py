"""Exception hierarchy shared by all modules."""


class RiverExtremesError(Exception):
    """Base class for all package errors."""


class InputError(RiverExtremesError, ValueError):
    """Malformed or inconsistent user input (files, arrays, parameters)."""


class DomainError(RiverExtremesError, ValueError):
    """An operation was called outside its mathematical domain."""


class KernelValidityError(DomainError):
    """A dependence kernel produced a covariance that is not positive
    semi-definite beyond numerical tolerance."""


class ThresholdError(DomainError):
    """A threshold is incompatible with the model (e.g. the below-threshold
    mass 1 - V(u) is negative, so the tail approximation is out of range)."""


class EstimationError(RiverExtremesError, RuntimeError):
    """An estimator could not produce a usable result (too few extreme
    observations, degenerate data, ...)."""


class ConvergenceError(EstimationError):
    """Numerical optimisation did not converge; carries the optimizer trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
