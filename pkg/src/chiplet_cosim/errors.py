"""Exception hierarchy shared by all modules."""


class CosimError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(CosimError, ValueError):
    """An input document or parameter is invalid.

    ``field`` names the offending field (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class InvalidLayerError(ConfigError):
    """A layer descriptor has degenerate or inconsistent dimensions."""


class SchedulingError(CosimError):
    """Traffic or compute was requested for a layer that is not mapped."""


class NotMappableError(CosimError):
    """The requested weights do not fit the available chiplet memory."""


class ConsistencyError(CosimError, RuntimeError):
    """Internal bookkeeping was violated (always a bug in the caller)."""
