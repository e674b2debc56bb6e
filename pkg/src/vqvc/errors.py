"""Exception hierarchy shared by every module."""


class VqvcError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VqvcError):
    """Tensor extents are inconsistent with the requested operation."""


class ConfigError(VqvcError):
    """A configuration value violates a structural constraint."""


class WeightError(VqvcError):
    """A required named weight is missing or has the wrong shape."""


class IntegrityError(VqvcError):
    """A serialized container fails its content-hash or length check."""


class VersionError(VqvcError):
    """A serialized container declares an unsupported format version."""


class CorruptStreamError(VqvcError):
    """A bitstream cannot be decoded (bad length, bad magic, index out of range)."""


class ProtocolError(VqvcError):
    """Frames arrived in an order the GOP state machine cannot accept."""


class ModelError(VqvcError):
    """A probability model handed to the range coder is malformed."""
