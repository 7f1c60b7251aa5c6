"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or violated operation precondition."""


class ShapeError(ValueError):
    """Mismatched dimensions between arguments."""


class FormatError(ValueError):
    """Malformed input file: bad magic number, bad CSV layout, and so on."""


class DataConsistencyError(ValueError):
    """Two related inputs disagree (e.g. image count vs label count)."""


class InsufficientHistoryError(ValueError):
    """A distance history is too short to compute a raw score."""


class NumericError(ArithmeticError):
    """A computed quantity became non-finite."""
