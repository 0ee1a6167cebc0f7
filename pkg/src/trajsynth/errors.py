"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataFormatError -> 3, NumericalError -> 4.
"""


class TrajsynthError(Exception):
    pass


class ConfigError(TrajsynthError):
    """Invalid configuration value or missing config field."""


class DataFormatError(TrajsynthError):
    """Malformed or inconsistent input file / corpus content."""


class NumericalError(TrajsynthError):
    """Non-finite loss, divergence, or other numerical failure."""
