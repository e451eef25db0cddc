"""Exception types shared across the package.

Every error raised on a documented failure path derives from
:class:`CotrackError`, so callers (and the CLI exit-code mapping) can
distinguish domain failures from programming errors.
"""


class CotrackError(Exception):
    """Base class for all domain errors raised by this package."""


class ConfigError(CotrackError):
    """A config file or run configuration failed validation."""


class UndefinedYawError(CotrackError):
    """Yaw extraction is undefined: the forward axis is parallel to world-up."""


class InsufficientDataError(CotrackError):
    """Too few samples or pairs to produce a meaningful estimate."""


class DegenerateGeometryError(CotrackError):
    """Point-set geometry does not constrain the requested transform."""


class InconsistentDataError(CotrackError):
    """Input samples disagree too strongly to aggregate."""


class MalformedFrameError(CotrackError):
    """A wire frame violates the framing contract and cannot be decoded."""


class UndefinedCorrelationError(CotrackError):
    """Cross-correlation is undefined: a signal is (near-)constant."""


class UnregisteredUserError(CotrackError):
    """A hub operation referenced a user id that was never registered."""


class PortBindError(CotrackError):
    """A server could not bind its listening port."""
