"""Exception types shared across the package."""


class RejectedInput(ValueError):
    """An operation received an input violating its preconditions."""


class ConfigError(Exception):
    """Invalid configuration: unknown key, bad value, or missing checkpoint."""
