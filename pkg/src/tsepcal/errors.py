"""Exception types raised across the calibration toolkit."""


class TsepError(Exception):
    """Base class for every toolkit error."""


class RangeError(TsepError, ValueError):
    """Argument outside the modeled range."""


class ModelDomainError(TsepError, ValueError):
    """Closed-form model evaluated where it is undefined."""


class InstabilityError(TsepError, RuntimeError):
    """Transient integration ran away."""


class CaptureError(TsepError, RuntimeError):
    """The V_LS trigger never fired on a trace."""


class DegenerateSampleError(TsepError, ValueError):
    """Sample carries no spread (zero variance or rank deficiency)."""


class DivergenceError(TsepError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class PreconditionError(TsepError, ValueError):
    """Inputs do not satisfy an operation's precondition."""
