"""Exception hierarchy shared by every growlab module."""


class GrowError(Exception):
    """Base class for growlab errors."""


class ConfigError(GrowError, ValueError):
    """Invalid task, layout, or training configuration."""


class UsageError(GrowError, RuntimeError):
    """An operation was called in a state where it is not allowed."""


class NumericError(GrowError, ArithmeticError):
    """A computation produced a non-finite value."""
