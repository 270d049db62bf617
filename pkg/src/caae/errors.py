"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
anything else -> 3.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


class DataError(Exception):
    """Bad input data: missing files, malformed rows, shape mismatches."""


class CodecError(DataError):
    """Corrupt or inconsistent frame data."""
