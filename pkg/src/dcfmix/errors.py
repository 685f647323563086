"""Exception hierarchy shared across the toolkit."""


class DcfMixError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(DcfMixError):
    """Planes or masks that must share width/height do not."""


class ShapeMismatch(DcfMixError):
    """Array arguments have incompatible shapes."""


class BinningMismatch(DcfMixError):
    """Two histograms were computed under different binnings."""


class BadEncoding(DcfMixError):
    """A file on disk does not match the required PNG encoding."""


class ClassOutOfRange(DcfMixError):
    """A label value is >= the declared class count and not IGNORE."""


class IoFailure(DcfMixError):
    """Reading or writing sample files failed."""


class InvalidArgument(DcfMixError):
    """A scalar argument violates its precondition."""


class EmptySource(DcfMixError):
    """A source label map contains no usable (non-ignore) pixels."""


class InvalidSpec(DcfMixError):
    """A synthetic scene specification violates its invariants."""


class ConfigError(DcfMixError):
    """A training configuration is inconsistent."""
