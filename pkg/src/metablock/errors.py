"""Error types shared across the package.

DataError covers malformed or inconsistent inputs (CLI exit code 2),
NumericalError covers degenerate sampler states such as runaway stick
walks or unnormalizable indicator distributions (CLI exit code 3).
"""


class DataError(ValueError):
    """Raised for malformed files, inconsistent dimensions, or bad values."""


class NumericalError(RuntimeError):
    """Raised when sampling or simulation hits a degenerate numerical regime."""
