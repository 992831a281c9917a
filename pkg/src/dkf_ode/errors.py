"""Exception hierarchy shared by all modules."""


class DKFError(Exception):
    """Base class for every error raised by this package."""


class ParameterDomainError(DKFError, ValueError):
    """A parameter vector lies outside the model's box domain."""


class DomainError(DKFError, ValueError):
    """An argument (time, penalty weight, ...) lies outside its valid range."""


class DivergenceError(DKFError, FloatingPointError):
    """A numerical integration produced a non-finite state."""

    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class IllPosedFitError(DKFError):
    """The spline design matrix is rank deficient."""


class ObservabilityError(DKFError):
    """The final Riccati matrix is singular or too ill-conditioned to invert."""


class NonUniqueMinimumError(DKFError):
    """The discretized tracking problem has no unique minimizer."""


class NonConvergenceError(DKFError):
    """Every optimizer start failed to converge.

    The best (unconverged) result is kept on ``result`` when available.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(DKFError, ValueError):
    """An experiment configuration is invalid."""
