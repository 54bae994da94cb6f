"""Configuration settings for the adaptive process engine."""

import json
import os
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Tuple, Union

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    """Engine settings loaded from environment variables."""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # MAPE loop
    MAPE_PERIOD_MS: int = int(os.getenv("MAPE_PERIOD_MS", "1000"))
    TRADEOFF_LAMBDA: float = float(os.getenv("TRADEOFF_LAMBDA", "1.0"))
    CHAIN_MAX_DEPTH: int = int(os.getenv("CHAIN_MAX_DEPTH", "8"))
    VERIFY_EACH_TICK: bool = _as_bool(os.getenv("VERIFY_EACH_TICK", "False"))

    # Tactic defaults
    REEXECUTE_CAP: int = int(os.getenv("REEXECUTE_CAP", "5"))
    COMPRESSION_RATIO: float = float(os.getenv("COMPRESSION_RATIO", "0.3"))
    COMPRESSION_CPU_MS: int = int(os.getenv("COMPRESSION_CPU_MS", "5"))
    COMPRESSION_BATTERY_COST: float = float(os.getenv("COMPRESSION_BATTERY_COST", "1.0"))
    CACHE_HIT_RATIO: float = float(os.getenv("CACHE_HIT_RATIO", "0.5"))
    QUEUE_MEMORY_COST: float = float(os.getenv("QUEUE_MEMORY_COST", "1.0"))

    # Model defaults
    OPT_DEFAULT_PROBABILITY: float = float(os.getenv("OPT_DEFAULT_PROBABILITY", "0.5"))

    # Client device resources
    BATTERY_BUDGET: float = float(os.getenv("BATTERY_BUDGET", "1000"))
    MEMORY_BUDGET: float = float(os.getenv("MEMORY_BUDGET", "1000"))
    RESOURCE_HIGH_FRACTION: float = float(os.getenv("RESOURCE_HIGH_FRACTION", "0.66"))
    RESOURCE_MEDIUM_FRACTION: float = float(os.getenv("RESOURCE_MEDIUM_FRACTION", "0.33"))

    # Simulation
    DRAIN_MS: int = int(os.getenv("DRAIN_MS", "120000"))

    # Dotted config-file keys mapped to attribute names and converters
    CONFIG_KEYS: Dict[str, Tuple[str, Callable[[Any], Any]]] = {
        "log.level": ("LOG_LEVEL", str),
        "mape.period_ms": ("MAPE_PERIOD_MS", int),
        "mape.verify_each_tick": ("VERIFY_EACH_TICK", _as_bool),
        "tradeoff.lambda": ("TRADEOFF_LAMBDA", float),
        "chain.max_depth": ("CHAIN_MAX_DEPTH", int),
        "tactics.reexecute_cap": ("REEXECUTE_CAP", int),
        "tactics.compression_ratio": ("COMPRESSION_RATIO", float),
        "tactics.compression_cpu_ms": ("COMPRESSION_CPU_MS", int),
        "tactics.compression_battery_cost": ("COMPRESSION_BATTERY_COST", float),
        "tactics.cache_hit_ratio": ("CACHE_HIT_RATIO", float),
        "tactics.queue_memory_cost": ("QUEUE_MEMORY_COST", float),
        "model.opt_probability": ("OPT_DEFAULT_PROBABILITY", float),
        "resources.battery_budget": ("BATTERY_BUDGET", float),
        "resources.memory_budget": ("MEMORY_BUDGET", float),
        "resources.high": ("RESOURCE_HIGH_FRACTION", float),
        "resources.medium": ("RESOURCE_MEDIUM_FRACTION", float),
        "sim.drain_ms": ("DRAIN_MS", int),
    }

    def apply_overrides(self, overrides: Mapping[str, Any]) -> None:
        """
        Apply dotted-key overrides, e.g. ``{"tradeoff.lambda": 0.5}``.

        Args:
            overrides: Mapping of dotted key to value

        Raises:
            ValueError: If a key is unknown or a value cannot be converted
        """
        for key, value in overrides.items():
            if key not in self.CONFIG_KEYS:
                raise ValueError(f"Unknown configuration key: {key}")
            attribute, convert = self.CONFIG_KEYS[key]
            try:
                setattr(self, attribute, convert(value))
            except (TypeError, ValueError) as e:
                raise ValueError(f"Invalid value for {key}: {value!r} ({e})")

    def load_file(self, path: Union[str, Path]) -> None:
        """
        Apply a JSON configuration file.

        Nested objects are flattened into dotted keys, so
        ``{"tradeoff": {"lambda": 0.5}}`` and ``{"tradeoff.lambda": 0.5}``
        are equivalent.

        Args:
            path: Path of the JSON file
        """
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError(f"Configuration file {path} must hold a JSON object")
        self.apply_overrides(_flatten(data))

    def validate(self) -> bool:
        """Validate setting ranges."""
        if self.MAPE_PERIOD_MS <= 0:
            raise ValueError("MAPE_PERIOD_MS must be positive")
        if self.TRADEOFF_LAMBDA < 0:
            raise ValueError("TRADEOFF_LAMBDA must not be negative")
        if self.CHAIN_MAX_DEPTH < 1:
            raise ValueError("CHAIN_MAX_DEPTH must be at least 1")
        if self.REEXECUTE_CAP < 1:
            raise ValueError("REEXECUTE_CAP must be at least 1")
        for name in ("COMPRESSION_RATIO", "CACHE_HIT_RATIO", "OPT_DEFAULT_PROBABILITY"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.RESOURCE_MEDIUM_FRACTION <= self.RESOURCE_HIGH_FRACTION <= 1.0:
            raise ValueError("Resource fractions must satisfy 0 <= medium <= high <= 1")
        if self.DRAIN_MS < 0:
            raise ValueError("DRAIN_MS must not be negative")
        return True

    def snapshot(self) -> Dict[str, Any]:
        """Return the current value of every configurable key."""
        return {key: getattr(self, attribute) for key, (attribute, _) in self.CONFIG_KEYS.items()}


def _flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted))
        else:
            flat[dotted] = value
    return flat


# Create global settings instance
settings = Settings()
