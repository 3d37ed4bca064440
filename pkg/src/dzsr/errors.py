"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes violate an operation's geometry contract."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range or unknown."""


class DataError(RuntimeError):
    """A dataset directory is missing, empty, or malformed."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable or incompatible with the config."""


class NumericError(FloatingPointError):
    """Non-finite values reached an operation that requires finite input."""
