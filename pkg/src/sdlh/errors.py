"""Exception hierarchy shared by all modules."""


class SdlhError(Exception):
    """Base class for all library errors."""


class InvalidInput(SdlhError, ValueError):
    pass


class NotCommuting(SdlhError):
    pass


class DegenerateGame(SdlhError):
    pass


class InternalError(SdlhError):
    pass


class BonusIneffective(SdlhError):
    pass


class StartFailure(SdlhError):
    pass


class NearSingular(SdlhError):
    pass


class StepRejected(SdlhError):
    pass


class TrackingAmbiguity(SdlhError):
    pass


class RefinementFailure(SdlhError):
    pass


class FitUnreliable(SdlhError):
    pass


class PathFailure(SdlhError):
    """A path trace ended without reaching ``t = 0``.

    The partial trace is attached as ``trace`` so callers can still export it.
    """

    kind = "PathFailure"

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class StallFailure(PathFailure):
    kind = "StallFailure"


class RangeExceeded(PathFailure):
    kind = "RangeExceeded"


class PathLeavesStrategySpace(PathFailure):
    kind = "PathLeavesStrategySpace"


class DegenerateEndpoint(PathFailure):
    kind = "DegenerateEndpoint"
