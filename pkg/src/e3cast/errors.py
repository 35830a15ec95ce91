"""Exception types raised across the package."""


class E3castError(Exception):
    """Base class for all package errors."""


class DataError(E3castError):
    """Input data is unusable; the CLI maps these to exit status 2."""


class IrregularSampling(DataError):
    pass


class MalformedValue(DataError):
    pass


class EmptyTrace(DataError):
    pass


class TraceTooShort(DataError):
    pass


class EmptyRange(E3castError):
    pass


class UndefinedDenominator(E3castError):
    pass


class NonInvertibleAffine(E3castError):
    pass


class ShapeError(E3castError):
    pass


class NumericalInstability(E3castError):
    pass


class TraceMismatch(E3castError):
    """A backward pass was requested with a cache from different parameters."""


class CheckpointError(DataError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass
