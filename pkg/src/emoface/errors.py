"""Exception types shared across the package.

The CLI maps these onto exit codes: data/format problems exit with 3,
numeric failures with 4.
"""


class EmoFaceError(Exception):
    """Base class for all package errors."""


class DimensionError(EmoFaceError, ValueError):
    """Shapes of operands do not agree."""


class NumericError(EmoFaceError, ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


class TopologyError(EmoFaceError, ValueError):
    """Malformed mesh connectivity."""


class FormatError(EmoFaceError, ValueError):
    """A binary or text file does not follow its declared layout."""


class SequenceError(EmoFaceError, ValueError):
    """Sequence lengths are inconsistent."""


class MetricError(EmoFaceError, ValueError):
    pass


class ResampleError(EmoFaceError, ValueError):
    pass


class DataError(EmoFaceError, ValueError):
    pass


class ConfigError(EmoFaceError, ValueError):
    pass
