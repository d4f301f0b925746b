"""Exception types raised across the package."""


class LongRunError(Exception):
    """Base class for all library errors."""


class NoDensityError(LongRunError, ValueError):
    """The evaluation has an atomic part and therefore no density."""


class InvalidIntegrandError(LongRunError, ValueError):
    pass


class InvalidWindowError(LongRunError, ValueError):
    pass


class InvalidMixtureError(LongRunError, ValueError):
    pass


class InvalidEvaluationError(LongRunError, ValueError):
    pass


class InvarianceViolation(LongRunError):
    """A simulated state left the (inflated) state box."""

    def __init__(self, message, exit_time):
        super().__init__(message)
        self.exit_time = exit_time


class ShadowFailure(LongRunError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class HorizonUnderflow(LongRunError, ValueError):
    pass


class TauberianDisagreement(LongRunError):
    def __init__(self, message, gap, ladder=None):
        super().__init__(message)
        self.gap = gap
        self.ladder = ladder


class InvalidDistribution(LongRunError, ValueError):
    pass


class NotConverged(LongRunError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


class BoundViolated(LongRunError):
    def __init__(self, message, window):
        super().__init__(message)
        self.window = window


class MinmaxNotConverged(LongRunError):
    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


class CertificationFailure(LongRunError):
    """A synthesis stage failed its numerical check."""

    def __init__(self, message, stage, report=None):
        super().__init__(message)
        self.stage = stage
        self.report = report
