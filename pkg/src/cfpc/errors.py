"""Exception hierarchy shared across the package.

The CLI maps ConfigError (and subclasses) to exit code 2 and
NumericalError / CorruptCheckpointError to exit code 3.
"""


class CfpcError(Exception):
    """Base class for all package errors."""


class ConfigError(CfpcError):
    """Invalid configuration or parameters."""


class UnsupportedConfigError(ConfigError):
    """Configuration is valid in general but outside the supported scope."""


class ParameterError(ConfigError):
    """Allocator / policy parameter outside its documented range."""


class NumericalError(CfpcError):
    """Non-finite intermediate, divergence, or failed numerical routine."""


class CorruptCheckpointError(CfpcError):
    """Checkpoint file failed magic/version/CRC validation."""
