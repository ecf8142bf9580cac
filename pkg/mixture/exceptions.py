class StreamGPError(Exception):
    """Base class for engine errors."""


class InputError(StreamGPError, ValueError):
    """Invalid data, shapes or configuration supplied by the caller."""


class NumericalError(StreamGPError, ArithmeticError):
    """A linear-algebra or optimization step could not be carried out."""

    def __init__(self, message, jitter_levels=()):
        super().__init__(message)
        self.jitter_levels = tuple(jitter_levels)


class StateError(StreamGPError, RuntimeError):
    """An operation was called on an object in the wrong lifecycle state."""
