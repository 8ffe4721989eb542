"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid argument or data fed to a public operation."""


class ConfigError(InputError):
    """Malformed configuration or definition file (unknown key, bad value, bad syntax)."""
