class LateIntError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LateIntError, ValueError):
    """Invalid configuration or parameter value."""


class InputError(LateIntError, ValueError):
    """Malformed input data (dimension mismatch, NaN components, ...)."""


class FormatError(LateIntError, ValueError):
    """A file does not match the expected binary or text format."""


class CorruptIndexError(LateIntError):
    """An index references ids or codes that are out of range."""


class IndexMismatchError(LateIntError):
    """Two indexes that should cover the same documents do not."""


class SweepError(LateIntError):
    """A sweep point failed; ``params`` holds the offending parameter record."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params
