"""Exception types shared across the package.

The CLI maps these onto process exit codes: config errors exit with 2,
data errors with 3, training divergence with 4.
"""


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


class DataError(Exception):
    """Invalid input data (files, triplets, features, splits)."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line number."""


class ColdStartUnsupportedError(ConfigError):
    """Cold-start evaluation requested for a content-free model."""


class TrainingDivergedError(Exception):
    """Non-finite loss or gradient encountered during training."""
