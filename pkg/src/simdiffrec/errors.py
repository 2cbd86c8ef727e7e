"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class SimDiffRecError(Exception):
    pass


class ConfigError(SimDiffRecError):
    """Bad or inconsistent configuration (unknown keys, invalid values)."""


class DataError(SimDiffRecError):
    """Malformed input data, missing files, or catalog mismatches."""


class NumericError(SimDiffRecError):
    """Non-finite losses or other numeric failures during training."""
