"""Exception hierarchy.

Every exception carries an ``exit_code`` used by the command-line driver, so
each failure class maps to a distinct process status.
"""


class BmdError(Exception):
    """Base class for all bmdkit errors."""

    exit_code = 1


class ParameterError(BmdError, ValueError):
    """An argument is outside its admissible range."""

    exit_code = 2


class DimensionError(BmdError, ValueError):
    """Operands are not conformable or have the wrong shape."""

    exit_code = 3


class BoundsError(BmdError, IndexError):
    """A slice or fiber index is outside the tensor."""

    exit_code = 3


class DomainError(BmdError, ValueError):
    """Input values are outside the domain of an operation (NaN, zero norm, ...)."""

    exit_code = 4


class NumericalError(BmdError, ArithmeticError):
    """A numerical kernel failed to converge."""

    exit_code = 5


class DivergenceError(NumericalError):
    """The ALS objective became non-finite.

    The partial convergence trace is attached as ``trace``.
    """

    exit_code = 6

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ContainerError(BmdError):
    """Base class for binary container decoding failures."""

    exit_code = 10


class BadMagicError(ContainerError):
    exit_code = 11


class UnsupportedVersionError(ContainerError):
    exit_code = 12


class TruncatedError(ContainerError):
    exit_code = 13


class ChecksumError(ContainerError):
    exit_code = 14


class DimsOverflowError(ContainerError):
    exit_code = 15


class FrameFormatError(BmdError):
    """Malformed, mixed-size, or unsupported PGM/PPM frames."""

    exit_code = 20
