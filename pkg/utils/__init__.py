"""Utility functions and helpers."""

from .errors import EngineError
from .validators import validate_identifier, validate_probability, validate_non_negative

__all__ = [
    "EngineError",
    "validate_identifier",
    "validate_probability",
    "validate_non_negative",
]
