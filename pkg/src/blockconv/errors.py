"""Exception types shared across the package."""


class BlockConvError(Exception):
    """Base class for all blockconv errors."""


class ShapeMismatchError(BlockConvError, ValueError):
    """Tensor/filter/mask dimensions are inconsistent; message names the offending dimension."""


class GeometryError(BlockConvError, ValueError):
    """Block tiling geometry is invalid or incompatible with the request."""


class CoverageError(GeometryError):
    """A coverage check found an uncovered active pixel or an overlapping scatter write."""


class UnsupportedConfigError(BlockConvError, ValueError):
    """The requested kernel configuration is outside what this algorithm supports."""


class EmptyBlockListError(BlockConvError, ValueError):
    """An operation that needs at least one active block received none."""


class FormatError(BlockConvError, ValueError):
    """A serialized file is malformed; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
