"""Exception hierarchy shared across the package."""


class DeniseError(Exception):
    """Base class for all package errors."""


class ConfigError(DeniseError, ValueError):
    """A configuration value violates its contract."""


class InputError(DeniseError):
    """A required input artifact is missing, unreadable or inconsistent."""
