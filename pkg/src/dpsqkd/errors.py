"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameters or mismatched inputs."""


class NumericalGuardError(RuntimeError):
    """A computation would exceed its size guard."""


class NoCrossingError(RuntimeError):
    """Bisection bracket contains no sign change."""
