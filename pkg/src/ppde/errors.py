"""Exception types raised by ppde."""


class PPDEError(Exception):
    """Base class for all library errors."""


class GridMismatchError(PPDEError, ValueError):
    """Two paths or points live on incompatible time grids."""


class InvalidDriftError(PPDEError, ValueError):
    """Drift bound violates ``L * sqrt(h) <= 1`` on a binomial tree."""


class DepthCapError(PPDEError, ValueError):
    """Requested non-recombining tree is deeper than the configured cap."""


class CFLViolationError(PPDEError, ValueError):
    """Explicit finite-difference step exceeds the stability limit."""


class SchemeError(PPDEError, RuntimeError):
    """A one-step operator produced a non-finite value at some node."""

    def __init__(self, message: str, level: int | None = None, node: int | None = None):
        super().__init__(message)
        self.level = level
        self.node = node


class ConfigError(PPDEError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
