"""Exception hierarchy shared across the package."""


class CTPNetError(Exception):
    """Base class for every error raised by ctpnet."""


# numeric engine
class ShapeMismatch(CTPNetError, ValueError):
    pass


class RankTooLow(CTPNetError, ValueError):
    pass


class NotScalar(CTPNetError, ValueError):
    pass


class NonFiniteError(CTPNetError, FloatingPointError):
    """An op produced NaN or Inf."""


# series preparation
class ParseError(CTPNetError, ValueError):
    pass


class MissingValue(CTPNetError, ValueError):
    pass


class TooFewRows(CTPNetError, ValueError):
    pass


class DegenerateChannel(CTPNetError, ValueError):
    pass


class SeriesTooShort(CTPNetError, ValueError):
    pass


class IndivisibleLength(CTPNetError, ValueError):
    pass


class ConstantSeries(CTPNetError, ValueError):
    pass


class NoSignificantPeriod(CTPNetError, ValueError):
    pass


# model / training
class ConfigInvalid(CTPNetError, ValueError):
    pass


class DataEmpty(CTPNetError, ValueError):
    pass


class Diverged(CTPNetError, RuntimeError):
    """Training produced a non-finite loss.

    The partial run record is attached as ``record`` when available.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
