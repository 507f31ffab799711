"""Exception hierarchy shared across the package."""


class FortressError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FortressError):
    """Invalid shapes, hyperparameters, or call contracts."""


class NumericError(FortressError):
    """A computation produced NaN or Inf."""


class DataError(FortressError):
    """Out-of-range labels or malformed dataset content."""


class FormatError(FortressError):
    """Malformed on-disk file (checkpoint, PPM/PGM, manifest)."""


class ContractError(FortressError):
    """A caller violated a documented precondition."""
