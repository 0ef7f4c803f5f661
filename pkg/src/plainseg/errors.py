"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new error kinds should extend
one of the three mid-level classes rather than ``PlainsegError`` directly.
"""


class PlainsegError(Exception):
    """Base class for all package errors."""


class ConfigError(PlainsegError):
    """Invalid or inconsistent configuration."""


class DataError(PlainsegError):
    """Malformed or inconsistent data (datasets, masks, annotation files)."""


class MalformedRleError(DataError):
    """Run-length counts violate the mask invariants."""


class MissingFieldError(DataError):
    """A required field is absent from an annotation document."""


class DanglingReferenceError(DataError):
    """An annotation references an image or category id that does not exist."""


class MalformedSegmentationError(DataError):
    """A segmentation entry is neither a valid polygon list nor a valid RLE."""


class NumericError(PlainsegError):
    """A non-finite value surfaced where finite arithmetic was required."""
