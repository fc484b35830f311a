"""Exception types shared across the package."""


class GeflError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(GeflError, ValueError):
    """Array extents do not agree with what an operation expects."""


class DomainError(GeflError, ValueError):
    """An argument lies outside the admissible domain (bad label, empty batch, ...)."""


class NumericError(GeflError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(GeflError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(GeflError, TypeError):
    """An operation was applied to the wrong kind of object."""
