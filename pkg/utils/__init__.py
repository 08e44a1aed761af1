"""Utility functions shared across the detector packages."""
from .errors import (
    ConfigError,
    DataError,
    GamedError,
    ModelFormatError,
    NumericDivergenceError,
    RecordNotFoundError,
)
from .logger import setup_logger

__all__ = [
    "setup_logger",
    "GamedError",
    "ConfigError",
    "DataError",
    "NumericDivergenceError",
    "ModelFormatError",
    "RecordNotFoundError",
]
