"""Exception hierarchy shared by every qnrl module."""


class QnrlError(Exception):
    """Base class for all library errors."""


class InvalidInputError(QnrlError, ValueError):
    """Dimension mismatch, empty batch, bad spectrum and similar misuse."""


class UnsupportedError(QnrlError):
    """Requested size or mode is outside what the routine supports."""


class NotDescentDirectionError(QnrlError, ValueError):
    """The directional derivative at the origin is not negative."""


class LineSearchFailure(QnrlError):
    """No trial step produced a finite objective value."""


class InvalidTransitionError(QnrlError):
    """An environment was stepped from a terminal state."""


class DivergedError(QnrlError, ArithmeticError):
    """Training or a benchmark produced non-finite or exploding values."""


class ConfigError(QnrlError, ValueError):
    """A run configuration failed validation."""
