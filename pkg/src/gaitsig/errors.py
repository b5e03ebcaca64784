"""Exception types shared across the package.

The CLI maps these onto process exit codes (see :mod:`gaitsig.evalcli.cli`).
"""


class GaitError(Exception):
    """Base class for all package errors."""


class DataError(GaitError, ValueError):
    """Malformed, missing or inconsistent input data."""


class ShapeError(GaitError, ValueError):
    """Incompatible tensor or layer geometry."""


class NumericalError(GaitError, ArithmeticError):
    """A non-finite value was produced."""


class ConfigError(GaitError, ValueError):
    """Invalid experiment configuration or command-line usage."""
