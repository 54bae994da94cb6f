"""Basic tests for settings, validators and expressions."""

import json

import pytest

from config.settings import settings
from utils.errors import ExpressionError
from utils.expressions import expected_attempts, parse_expression
from utils.validators import (
    validate_distribution,
    validate_identifier,
    validate_non_negative,
    validate_probability,
    validate_thresholds,
)


@pytest.fixture
def restore_settings():
    saved = settings.snapshot()
    yield settings
    settings.apply_overrides(saved)


def test_settings_loaded():
    """Test that settings are loaded with their defaults."""
    assert settings.MAPE_PERIOD_MS == 1000
    assert settings.TRADEOFF_LAMBDA == 1.0
    assert settings.CHAIN_MAX_DEPTH == 8
    assert settings.REEXECUTE_CAP == 5
    assert settings.COMPRESSION_RATIO == 0.3
    assert settings.validate() is True


def test_settings_overrides(restore_settings):
    """Test dotted-key overrides and their conversion."""
    settings.apply_overrides({"tradeoff.lambda": "0.5", "mape.verify_each_tick": "yes"})
    assert settings.TRADEOFF_LAMBDA == 0.5
    assert settings.VERIFY_EACH_TICK is True
    assert settings.snapshot()["tradeoff.lambda"] == 0.5

    with pytest.raises(ValueError, match="Unknown configuration key"):
        settings.apply_overrides({"tradeoff.gamma": 1})
    with pytest.raises(ValueError, match="Invalid value"):
        settings.apply_overrides({"chain.max_depth": "deep"})


def test_settings_file(tmp_path, restore_settings):
    """Test that nested and dotted keys in a file are equivalent."""
    path = tmp_path / "engine.json"
    path.write_text(json.dumps({"tactics": {"compression_ratio": 0.5}, "chain.max_depth": 4}))
    settings.load_file(path)
    assert settings.COMPRESSION_RATIO == 0.5
    assert settings.CHAIN_MAX_DEPTH == 4

    path.write_text("[1, 2]")
    with pytest.raises(ValueError):
        settings.load_file(path)


def test_settings_validation(restore_settings):
    """Test range checks."""
    settings.apply_overrides({"tactics.cache_hit_ratio": 1.5})
    with pytest.raises(ValueError, match="CACHE_HIT_RATIO"):
        settings.validate()
    settings.apply_overrides({"tactics.cache_hit_ratio": 0.5, "resources.medium": 0.9})
    with pytest.raises(ValueError, match="Resource fractions"):
        settings.validate()


def test_identifier_validation():
    """Test identifier validation."""
    assert validate_identifier("latency_ms") is True
    assert validate_identifier("_x1") is True
    assert validate_identifier("1x") is False
    assert validate_identifier("a-b") is False
    assert validate_identifier("") is False


def test_probability_validation():
    """Test probability and distribution validation."""
    assert validate_probability(0.0) is True
    assert validate_probability(1) is True
    assert validate_probability(1.01) is False
    assert validate_probability(float("nan")) is False

    assert validate_distribution([0.8, 0.2]) == (True, pytest.approx(1.0))
    is_valid, total = validate_distribution([0.5, 0.6])
    assert is_valid is False
    assert total == pytest.approx(1.1)
    assert validate_distribution([])[0] is False


def test_number_validation():
    """Test non-negative numbers and fuzzy thresholds."""
    assert validate_non_negative(None) is True
    assert validate_non_negative(0) is True
    assert validate_non_negative(-1) is False
    assert validate_non_negative(float("inf")) is False

    assert validate_thresholds(1, 2) is True
    assert validate_thresholds(2, 2) is True
    assert validate_thresholds(3, 2) is False


def test_expressions():
    """Test parsing and evaluating restricted expressions."""
    expression = parse_expression("latency_ms < 500 and not failed")
    assert expression.names == frozenset({"latency_ms", "failed"})
    assert expression.evaluate({"latency_ms": 200, "failed": False}) is True
    assert expression.evaluate({"latency_ms": 800, "failed": False}) is False

    assert parse_expression("max(a, b) * 2").evaluate({"a": 1, "b": 3}) == 6
    assert parse_expression("x if x > 0 else 0").evaluate({"x": -4}) == 0
    assert expected_attempts(0.5, 3) == pytest.approx(1.75)
    assert expected_attempts(0.0, 3) == 3.0


@pytest.mark.parametrize("source", ["", "x[0]", "a.b", "[1, 2]", "lambda: 1", "f(x=1)"])
def test_rejected_expressions(source):
    """Test that anything outside the whitelist is refused."""
    with pytest.raises(ExpressionError):
        parse_expression(source)


def test_expression_evaluation_errors():
    """Test errors raised while evaluating."""
    with pytest.raises(ExpressionError, match="unknown name"):
        parse_expression("a + b").evaluate({"a": 1})
    with pytest.raises(ExpressionError, match="unknown function"):
        parse_expression("cube(2)").evaluate({})
    with pytest.raises(ExpressionError, match="cannot evaluate"):
        parse_expression("1 / x").evaluate({"x": 0})


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
