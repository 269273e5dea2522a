"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
EstimationError / NumericalError -> 3.
"""


class VarsmcError(Exception):
    """Base class for all package errors."""


class ConfigError(VarsmcError):
    """Invalid configuration (bad flag value, unknown model, bad schema)."""


class DataError(VarsmcError):
    """Malformed or insufficient input data."""


class EstimationError(VarsmcError):
    """Model estimation failed (rank deficiency, too few observations)."""


class NumericalError(VarsmcError):
    """Numerical failure during inference or forecasting (degeneracy, NaN)."""
