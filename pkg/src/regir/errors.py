"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class RegirError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RegirError):
    """Invalid configuration or usage (bad flag, missing field, bad value)."""


class DataError(RegirError):
    """Unreadable or malformed input data (files, datasets, checkpoints)."""


class NumericError(RegirError):
    """Numeric failure during training (non-finite loss)."""
