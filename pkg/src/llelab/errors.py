"""Exception types shared across the package."""


class LLELabError(Exception):
    """Base class for all package errors."""


class UnsupportedOrderError(LLELabError):
    """Requested derivative order is not supported."""


class NewtonError(LLELabError):
    """Newton iteration failed to converge."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history or []


class SingularJacobianError(NewtonError):
    """Jacobian (or bordered Jacobian) is numerically singular."""

    def __init__(self, message, condition_estimate):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class ContinuationError(LLELabError):
    """Parameter continuation failed; carries the failing step index."""

    def __init__(self, message, step_index, cause=None):
        super().__init__(message)
        self.step_index = step_index
        self.cause = cause


class CurveTrackingError(LLELabError):
    """Eigenvalue-curve tracking became ambiguous (low eigenvector overlap)."""


class SpectralAssumptionError(LLELabError):
    """An operation requires a verified (D1)-(D3) report and none is available."""


class BlowUpError(LLELabError):
    """Time integration produced a nonfinite field."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class PicardConvergenceError(LLELabError):
    """Fixed-point sweep failed to contract."""

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = ratios or []


class SigmaTrackingError(LLELabError):
    """Phase-fit minimizer jumped by more than half a period between snapshots."""


class SingularModulationError(LLELabError):
    """gamma_x reached 1; the 1/(1-gamma_x) factors are singular."""


class InsufficientDataError(LLELabError):
    """Requested fit window is too short for the decay model."""
