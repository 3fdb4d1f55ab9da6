"""Sidecar exception types."""


class SidecarError(Exception):
    """Base class for sidecar failures."""


class UsageError(SidecarError):
    """Invalid invocation: missing inputs or unknown modes."""


class EncoderLoadFailure(SidecarError):
    """The requested encoder checkpoint could not be loaded."""


class ImageDecodeError(SidecarError):
    """An image asset exists but cannot be decoded."""


class IoFailure(SidecarError):
    """An underlying read or write failed."""
