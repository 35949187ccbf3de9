"""Exception types shared across the package."""


class PilotError(Exception):
    """Base class for all viewpilot errors."""


class InvalidInput(PilotError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(PilotError):
    """A data file is malformed. Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionError(ParseError):
    """A data or checkpoint file has an unsupported format version."""


class StateError(PilotError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericsError(PilotError):
    """A non-finite value appeared where the computation requires finite numbers."""


class ConfigError(PilotError):
    """A configuration file or override is invalid."""
