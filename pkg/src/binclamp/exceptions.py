class BinclampError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(BinclampError, ValueError):
    pass


class ParameterError(BinclampError, ValueError):
    pass


class StateError(BinclampError, RuntimeError):
    pass


class DataError(BinclampError, ValueError):
    """Malformed or inconsistent data (bad labels, dirty padding bits, rankings)."""


class FormatError(DataError):
    """A binary file does not follow its documented layout."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(BinclampError, ValueError):
    """Experiment configuration failed validation; ``fields`` names the offenders."""

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = list(fields or [])


class DivergenceError(BinclampError, FloatingPointError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration
