"""Shared exception types.

Three failure families cover the whole library: shape problems, violated
call contracts, and non-finite numerics. Ops raise these instead of letting
numpy warnings or NaNs propagate silently.
"""


class MostatsError(Exception):
    """Base class for all library errors."""


class DimensionError(MostatsError):
    """Shapes or extents are incompatible with the requested operation."""


class ContractError(MostatsError):
    """A documented precondition or invariant was violated by the caller."""


class NumericError(MostatsError):
    """A computation produced or encountered non-finite values."""


class ConfigError(MostatsError):
    """A configuration file or object failed validation."""
