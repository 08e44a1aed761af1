"""Error hierarchy shared by every package, plus the CLI exit-code map."""


class GamedError(Exception):
    """Base class for all errors raised by the detector."""

    exit_code = 1


class ConfigError(GamedError):
    """A configuration value, flag or key is missing or invalid."""

    exit_code = 2


class DataError(GamedError):
    """Input data is missing, malformed or out of range."""

    exit_code = 3


class MalformedLineError(DataError):
    """A JSONL line could not be parsed."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}: line {line_number}: {reason}")


class MissingKeyError(DataError):
    """A JSONL record lacks a required key."""

    def __init__(self, path: str, line_number: int, key: str):
        self.path = path
        self.line_number = line_number
        self.key = key
        super().__init__(f"{path}: line {line_number}: missing key '{key}'")


class NumericDivergenceError(GamedError):
    """Training produced a non-finite loss."""

    exit_code = 4


class ModelFormatError(GamedError):
    """A model file has a bad magic, an incompatible version or is truncated."""

    exit_code = 5


class RecordNotFoundError(GamedError):
    """A record id was requested that the dataset does not contain."""

    exit_code = 6
