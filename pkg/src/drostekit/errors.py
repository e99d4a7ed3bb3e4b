"""Exception types shared across the toolkit."""


class DrosteKitError(Exception):
    """Base class for all toolkit errors."""


class DomainError(DrosteKitError, ValueError):
    """Mathematically invalid input: zero/non-finite values, out-of-range parameters."""


class ConfigError(DrosteKitError, ValueError):
    """Bad user configuration: unknown keys, malformed values, missing files."""


class UnsupportedInputError(DrosteKitError, ValueError):
    """Structurally valid input the algorithms cannot process (e.g. a hole with no known boundary)."""


class BackendError(DrosteKitError, RuntimeError):
    """An inpainting backend failed: nonzero exit, timeout, or malformed output."""
