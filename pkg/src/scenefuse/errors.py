"""Exception hierarchy shared across the engine.

ConfigError and InputDataError map onto the CLI exit-code contract
(2 and 3 respectively); everything else surfaces as an internal error.
"""


class SceneFuseError(Exception):
    """Base class for all engine errors."""


class DomainError(SceneFuseError, ValueError):
    """Input outside the mathematical domain of an operation."""


class InvalidDepthError(DomainError):
    """Depth value outside the camera's valid sensing range."""


class BehindCameraError(DomainError):
    """Point with non-positive z cannot be projected."""


class NoDepthError(SceneFuseError):
    """A bounding box contained no valid depth sample."""


class DegenerateInputError(SceneFuseError, ValueError):
    """Geometry too degenerate to solve (too few or collinear points)."""


class NoOverlapError(SceneFuseError):
    """Registration found zero point pairs inside the distance gate."""


class LifecycleError(SceneFuseError):
    """Operation on a track in a state that forbids it."""


class OrderingError(SceneFuseError):
    """Timestamps decreased where a non-decreasing stream is required."""


class LogWriteError(SceneFuseError):
    """Event log append failed after the retry."""


class ConfigError(SceneFuseError):
    """Configuration file invalid (CLI exit code 2)."""


class InputDataError(SceneFuseError):
    """Input data file missing or malformed (CLI exit code 3)."""
