"""Exception hierarchy shared across the toolkit."""


class MetricForgeError(Exception):
    """Base class for all toolkit errors."""


class FormatError(MetricForgeError):
    """A serialized file is malformed, truncated, or carries a wrong magic/version."""


class ValidationError(MetricForgeError):
    """Data violates a structural invariant (non-finite values, duplicate keys, ...)."""


class ConfigError(MetricForgeError):
    """A configuration file or key is invalid or unknown."""


class DataError(MetricForgeError):
    """The data is too degenerate for the requested operation (single class, too few videos, ...)."""
