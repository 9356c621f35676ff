"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class TapNetError(Exception):
    exit_code = 1


class ConfigError(TapNetError, ValueError):
    exit_code = 1


class ShapeError(TapNetError, ValueError):
    exit_code = 1


class DimensionError(TapNetError, ValueError):
    """Requested projection dimension does not fit: L < N_c + D."""

    exit_code = 1


class CapacityError(TapNetError, ValueError):
    """More episode classes than trained reference vectors."""

    exit_code = 1


class InvalidEpisodeError(TapNetError, ValueError):
    exit_code = 1


class DataError(TapNetError):
    exit_code = 2


class CheckpointError(DataError):
    pass


class NumericError(TapNetError, ArithmeticError):
    exit_code = 3


class DegenerateError(NumericError):
    """A vector that must be normalized has (near-)zero norm."""


class StateError(TapNetError, RuntimeError):
    exit_code = 1
