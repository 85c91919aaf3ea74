"""Exception hierarchy for mdlmix."""


class MdlmixError(Exception):
    """Base class for all mdlmix errors."""


class DegenerateParameterError(MdlmixError):
    """Raised when a parameterization cannot produce valid mixture weights."""


class EvaluationError(MdlmixError):
    """Raised when an encoder evaluation produces non-finite quantities."""


class DegenerateJacobianError(MdlmixError):
    """Raised when the spatial Jacobian is numerically rank deficient."""


class FitFailureError(MdlmixError):
    """Raised when no valid bit-cost minimum was found within budget.

    Carries the best (invalid) diagnostics seen during the run in
    ``best_result``.
    """

    def __init__(self, message, best_result=None):
        super().__init__(message)
        self.best_result = best_result


class IrreparableRangesError(MdlmixError):
    """Raised when no truncation-range shrinkage makes the bit cost valid."""


class PruneError(MdlmixError):
    """Raised when pruning would remove every mixture component."""


class ModelFormatError(MdlmixError):
    """Raised on malformed model files, version or invariant violations."""


class UnsupportedPlotError(MdlmixError):
    """Raised when plot data is requested for more than two dimensions."""
