"""Input validation utilities."""

import math
import re
from typing import Iterable, Optional, Tuple

IDENTIFIER_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def validate_identifier(name: str) -> bool:
    """
    Validate that a name can be used as a variable in expressions.

    Args:
        name: Candidate name

    Returns:
        True if valid, False otherwise
    """
    return bool(name) and IDENTIFIER_PATTERN.match(name) is not None


def validate_probability(value: float) -> bool:
    """
    Validate that a value is a finite probability.

    Args:
        value: Value to check

    Returns:
        True if value lies in [0, 1], False otherwise
    """
    return isinstance(value, (int, float)) and math.isfinite(value) and 0.0 <= value <= 1.0


def validate_distribution(probabilities: Iterable[float], tolerance: float = 1e-9) -> Tuple[bool, float]:
    """
    Validate that probabilities form a distribution.

    Args:
        probabilities: Branch probabilities
        tolerance: Allowed deviation of the sum from 1

    Returns:
        Tuple of (is_valid, sum of probabilities)
    """
    values = list(probabilities)
    total = math.fsum(values)
    if not values or not all(validate_probability(p) for p in values):
        return False, total
    return abs(total - 1.0) <= tolerance, total


def validate_non_negative(value: Optional[float]) -> bool:
    """
    Validate that an optional number is finite and not negative.

    Args:
        value: Number to check; None counts as valid

    Returns:
        True if valid, False otherwise
    """
    if value is None:
        return True
    return math.isfinite(value) and value >= 0


def validate_thresholds(x1: float, x2: float) -> bool:
    """
    Validate fuzzy band boundaries.

    Args:
        x1: Lower boundary
        x2: Upper boundary

    Returns:
        True if both are finite and x1 <= x2
    """
    return math.isfinite(x1) and math.isfinite(x2) and x1 <= x2
