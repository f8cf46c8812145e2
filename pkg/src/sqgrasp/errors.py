"""Exception types raised across the pipeline."""


class SqGraspError(Exception):
    """Base class for all library errors."""


class MeshFormatError(SqGraspError):
    """A mesh stream could not be parsed.

    ``location`` is a 1-based line number for text formats or a byte offset
    for binary ones.
    """

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)
        self.location = location


class EmptyInputError(SqGraspError):
    """The input contained no usable geometry."""


class ConfigurationError(SqGraspError):
    """A parameter is outside its allowed range."""


class OutOfDomainError(SqGraspError):
    """A query fell outside the domain of a sampled field."""

    def __init__(self, message, clamped_value):
        super().__init__(message)
        self.clamped_value = clamped_value


class DomainError(SqGraspError):
    """A function was called outside the regime it is defined for."""


class InsufficientDataError(SqGraspError):
    """Too few samples to determine the requested fit."""


class NumericalError(SqGraspError):
    """An optimizer produced a non-finite objective."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class EmptyObjectError(SqGraspError):
    """The signed distance grid has no interior voxels."""
