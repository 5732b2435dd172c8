"""Exception hierarchy shared by every lfmdt module."""


class LfmdtError(Exception):
    """Base class for all errors raised by lfmdt."""


class DimensionError(LfmdtError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(LfmdtError, ArithmeticError):
    """A NaN or infinity reached an operation that requires finite input."""


class UsageError(LfmdtError):
    """An API was called in a way its contract forbids."""


class FormatError(LfmdtError):
    """A binary file has a bad magic, version or header."""


class LengthError(FormatError):
    """A binary file payload is shorter or longer than its header declares."""


class SizeError(LfmdtError, ValueError):
    """Spatial extents are too small or not divisible as required."""


class ConfigError(LfmdtError, ValueError):
    """A configuration value is missing, unknown or inconsistent."""


class CheckpointError(LfmdtError):
    """A parameter checkpoint does not match the network configuration."""


class RangeWarning(UserWarning):
    """Pixel values were found outside [0, 1] and clamped."""
