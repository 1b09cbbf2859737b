"""Exception hierarchy shared across the toolkit."""


class PassforgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PassforgeError):
    """Invalid configuration value (size class, family, temperature, ...)."""


class InputError(PassforgeError):
    """Invalid input data passed to an operation."""


class FormatError(PassforgeError):
    """Malformed on-disk artifact (CSV / JSON / checkpoint)."""
