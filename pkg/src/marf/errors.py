"""Exception types shared across the pipeline.

User/configuration problems raise ConfigError (CLI exit code 1); internal
numerical failures raise NumericalError (CLI exit code 2).
"""


class MarfError(Exception):
    """Base class for all package errors."""


class DecodeError(MarfError):
    """An image file could not be read or decoded."""


class FormatError(MarfError):
    """A structured input file does not match its documented schema."""


class ConfigError(MarfError):
    """Invalid configuration or arguments supplied by the caller."""


class DegenerateSceneError(ConfigError):
    """Scene geometry does not admit the requested operation."""


class NumericalError(MarfError):
    """A non-finite value appeared where the math requires finite ones."""
