"""Exception hierarchy shared by all bwex modules."""


class BwexError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BwexError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class LengthError(BwexError, ValueError):
    """A signal is too short (or otherwise of the wrong length)."""


class ShapeError(BwexError, ValueError):
    """Tensor shapes are inconsistent."""


class ConfigError(BwexError, ValueError):
    """A configuration object violates its invariants."""


class UsageError(BwexError, RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class WavFormatError(BwexError, ValueError):
    """Malformed RIFF/WAVE data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(BwexError, ValueError):
    """Well-formed WAV data in an encoding we do not decode."""


class TrainingDivergedError(BwexError, RuntimeError):
    """Loss became non-finite during training."""


class UnsupportedRatioError(ConfigError):
    """The requested upscaling ratio is outside what a method supports."""
