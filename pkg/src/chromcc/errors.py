"""Exception types raised across the package.

`DataError` subclasses map to CLI exit code 3, `DivergenceDetected` to 4.
"""


class ChromccError(Exception):
    """Base class for all package errors."""


class DataError(ChromccError):
    """Input data is unusable."""


class ZeroVector(DataError):
    pass


class EmptyImage(DataError):
    pass


class DegenerateIlluminant(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class OutOfBounds(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class InsufficientIlluminants(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MissingFile(DataError):
    pass


class ModelFileError(DataError):
    """Base for model (de)serialization failures."""


class IoFailure(ModelFileError):
    pass


class BadMagic(ModelFileError):
    pass


class VersionMismatch(ModelFileError):
    pass


class ChecksumMismatch(ModelFileError):
    pass


class BadK(ChromccError, ValueError):
    pass


class DivergenceDetected(ChromccError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])
