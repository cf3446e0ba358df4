"""Exception types raised across the package."""


class HopeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(HopeError, ValueError):
    """Shapes, ranges or labels that violate an operation's precondition."""


class DegenerateRowError(HopeError, ValueError):
    """A projection row has zero norm."""


class DegenerateProjectionError(HopeError, ValueError):
    """A projected sample has zero length and cannot be unit-normalized."""


class SingularProjectionError(HopeError, ValueError):
    """U U^T is singular, so the free-norm formulas are undefined."""


class DomainError(HopeError, ValueError):
    """Argument outside the domain of a special function."""


class NumericError(HopeError, FloatingPointError):
    """Non-finite values appeared in inputs or intermediate results."""


class TrainingDivergedError(NumericError):
    """The training objective became NaN or infinite."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class StateError(HopeError, RuntimeError):
    """An object was used before it was fitted or configured."""


class FormatError(HopeError, ValueError):
    """Malformed binary input (bad magic number, bad header, ...)."""


class TruncatedFileError(FormatError):
    """The file ended before the header promised."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""


class UnsupportedVersionError(FormatError):
    """Model file written by an unknown format version."""
