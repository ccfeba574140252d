"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class AdvNidsError(Exception):
    """Base class for all library errors."""


class ConfigError(AdvNidsError, ValueError):
    """Invalid configuration: bad hyperparameters, malformed config files."""


class DataError(AdvNidsError, ValueError):
    """Unreadable, malformed, or inconsistent input data."""


class NumericalError(AdvNidsError, ArithmeticError):
    """Non-finite values produced during training or an attack."""
