"""Block-wise phase-randomized DPS QKD: protocol simulation and key-rate scaling."""

__version__ = "0.1.0"

from dpsqkd.errors import ConfigError, NoCrossingError, NumericalGuardError

__all__ = ["ConfigError", "NoCrossingError", "NumericalGuardError", "__version__"]
