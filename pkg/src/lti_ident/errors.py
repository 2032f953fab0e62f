"""Exception types raised across the package."""


class LTIError(Exception):
    """Base class for all errors raised by lti_ident."""


class DimensionError(LTIError, ValueError):
    """Matrix or vector shapes are inconsistent."""


class NumericError(LTIError, ArithmeticError):
    """A computation produced non-finite or numerically meaningless values."""


class PoleError(NumericError):
    """The resolvent (zI - A) is singular at the requested point."""

    def __init__(self, z):
        super().__init__(f"z = {z!r} is (numerically) a pole of the system")
        self.z = z


class SingularCovarianceError(NumericError):
    """A Gaussian conditional has a singular covariance."""


class RankDeficiencyError(LTIError, ValueError):
    """A Hankel or variability matrix does not reach the required rank."""


class DegenerateDecoderError(NumericError):
    """The decoder's volume term vanishes (|det| below the floor)."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class UndefinedCorrelationError(LTIError, ValueError):
    """A signal component is constant, so its Pearson correlation is undefined."""

    def __init__(self, which: str, component: int):
        super().__init__(f"component {component} of {which} is constant; correlation undefined")
        self.which = which
        self.component = component


class ConfigError(LTIError, ValueError):
    """An experiment configuration is invalid."""
