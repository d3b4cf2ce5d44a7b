"""Exception hierarchy shared by all rcc modules."""


class RccError(Exception):
    """Base class for all rcc errors."""


class NoValidTiling(RccError):
    """No integer strip count k solves M = (k+1)*n_L + k*n_S."""


class StateSpaceTooLarge(RccError):
    """A supernode state space q**b exceeds the configured cap."""


class MomentMismatch(RccError):
    """A supplied reduced-model parameter does not match its target moments."""


class HullBoundary(RccError):
    """A target moment lies on or outside the closure of the achievable set."""


class DidNotConverge(RccError):
    """Gradient descent hit its iteration budget.

    Carries the best iterate so callers can inspect or continue.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CorruptStream(RccError):
    """A coded bitstream failed a structural or range check."""


class TooManySymbols(RccError):
    """A pmf has more symbols than the quantizer supports."""


class LayoutMismatch(RccError):
    """A cutset layout is inconsistent with the configuration shape."""
