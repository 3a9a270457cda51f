"""Exception hierarchy shared by every module."""


class MaeBoundError(Exception):
    """Base class for all package errors."""


class ParameterError(MaeBoundError, ValueError):
    """An argument is outside its allowed range."""


class DimensionError(ParameterError):
    """Array shapes or lengths do not line up."""


class NumericError(MaeBoundError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(MaeBoundError, ValueError):
    """A binary file does not match its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ModeError(ParameterError):
    """The requested evaluation mode cannot handle the given input size."""


class CapabilityError(MaeBoundError):
    """The supplied object lacks a capability the operation needs."""


class DegenerateAnchorError(ParameterError):
    """Calibration anchors coincide, so the anchor system is singular."""


class ConfigError(MaeBoundError, ValueError):
    """An experiment configuration is malformed."""
