"""Exception types shared across the package."""


class DareError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(DareError, ValueError):
    """An argument violates a documented precondition."""


class OutOfBoundsError(DareError, ValueError):
    """A sample or index falls outside the volume bounds."""


class SynchronizationError(DareError, RuntimeError):
    """Image and pose streams share no usable time range."""


class SweepFormatError(DareError, ValueError):
    """A sweep recording file is malformed (message carries file:line)."""


class VolumeFormatError(DareError, ValueError):
    """A volume file is malformed or has the wrong magic/version."""


class UndefinedMetricError(DareError, ValueError):
    """A similarity metric is undefined for the given inputs."""


class ProtocolError(DareError, ValueError):
    """A wire message cannot be decoded."""
