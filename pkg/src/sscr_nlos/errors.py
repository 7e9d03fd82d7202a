"""Exception types shared across the package."""


class SscrError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(SscrError):
    """A scene or measurement layout does not fit the voxel grid."""


class MembershipError(SscrError):
    """A volume is not a valid single-surface element.

    Raised when some pixel column holds two or more nonzero albedo values,
    or a negative one.
    """

    def __init__(self, pixel, count, message=None):
        self.pixel = tuple(pixel)
        self.count = int(count)
        super().__init__(
            message
            or f"pixel {self.pixel} has {self.count} nonzero column entries"
        )


class DimensionMismatch(SscrError):
    """Operands were built against different grids or measurement layouts."""


class ProbabilityOverflow(SscrError):
    """A per-pulse detection probability reached or exceeded 1."""


class SingularSystem(SscrError):
    """A graph least-squares system has no data anchor at all."""


class ConfigError(SscrError):
    """A patch/block configuration is inconsistent with the data dims."""


class ZeroSignal(SscrError):
    """An operation requiring a nonzero reference signal received zeros."""


class FormatError(SscrError):
    """A file does not conform to its on-disk format."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
