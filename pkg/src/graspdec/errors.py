"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific class that applies rather than bare ValueError.
"""


class GraspdecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GraspdecError, ValueError):
    """Invalid parameter, option, or configuration value (CLI exit code 2)."""


class DataError(GraspdecError, ValueError):
    """Malformed, inconsistent, or insufficient input data (CLI exit code 3)."""


class NumericalError(GraspdecError, ArithmeticError):
    """Numerical failure such as rank deficiency or non-convergence (CLI exit code 4)."""
