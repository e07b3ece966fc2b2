"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: configuration errors exit
with 3, data errors (including file-format errors) with 2, anything else
with 1.
"""


class MlpstError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MlpstError):
    """A configuration value or combination of values is invalid."""


class DataError(MlpstError):
    """Input data cannot be used (empty, inconsistent, out of range)."""


class FormatError(DataError):
    """A binary file does not match its declared format.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
