"""Exception types shared across the package."""


class InrFuseError(Exception):
    """Base class for all package errors."""


class ShapeError(InrFuseError, ValueError):
    """Operands have incompatible shapes."""


class NumericError(InrFuseError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class UsageError(InrFuseError, ValueError):
    """An operation was called outside its preconditions."""


class ConfigError(InrFuseError, ValueError):
    """A configuration object holds invalid values."""


class FormatError(InrFuseError, ValueError):
    """A file is not in a supported format."""
