"""Shared exception types."""


class CorrdynError(Exception):
    """Base class for all library errors."""


class ContractError(CorrdynError, ValueError):
    """An operation was called with arguments violating its contract."""


class SizeLimitError(CorrdynError, ValueError):
    """A combinatorial enumeration exceeded the configured size cap."""


class FlowDivergenceError(CorrdynError, RuntimeError):
    """Numerical integration of a trajectory produced non-finite state."""


class ConfigError(CorrdynError, ValueError):
    """A run configuration is malformed; the message carries the field path."""
