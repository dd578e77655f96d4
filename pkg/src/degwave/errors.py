"""Exception and warning types raised across the package."""


class DegwaveError(Exception):
    """Base class for all package errors."""


class NonDegenerate(DegwaveError):
    pass


class NotPositive(DegwaveError):
    pass


class NonIntegrableDrift(DegwaveError):
    pass


class GridMismatch(DegwaveError):
    pass


class NegativeSquare(DegwaveError):
    pass


class EigensolveFailure(DegwaveError):
    pass


class ClassRequired(DegwaveError):
    pass


class SolverFailure(DegwaveError):
    pass


class EnergyDriftExceeded(DegwaveError):
    """Raised by strict runs; the offending trajectory is attached."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class HypothesisViolated(DegwaveError):
    pass


class TimeTooShort(DegwaveError):
    pass


class BudgetZero(DegwaveError):
    pass


class NoConvergence(DegwaveError):
    """CG hit ``max_iter``; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(DegwaveError):
    pass


class CoercivityWarning(UserWarning):
    """T does not exceed T0, so coercivity of the HUM form is not guaranteed."""
