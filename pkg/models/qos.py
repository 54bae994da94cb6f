"""Quality-of-service value types."""

import enum
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Optional, Tuple


class QualityLevel(enum.Enum):
    """Band a measured value falls into."""
    ACCEPTABLE = "acceptable"
    TOLERABLE = "tolerable"
    UNACCEPTABLE = "unacceptable"

    @property
    def rank(self) -> int:
        return _RANKS[self]


_RANKS = {QualityLevel.ACCEPTABLE: 0, QualityLevel.TOLERABLE: 1, QualityLevel.UNACCEPTABLE: 2}


class Severity(enum.Enum):
    """How urgently an adaptation is needed."""
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class Measurement:
    """A value produced by a checkpoint."""

    property_name: str
    value: float
    instance_id: Optional[int]
    sim_time_ms: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TriggerEvent:
    """An adaptation need raised by a requirement or a falsification.

    ``chain`` lists the ``(trigger, pattern)`` pairs that led to this event.
    """

    trigger_name: str
    severity: Severity
    source_qr: Optional[str]
    sim_time_ms: int
    chain: Tuple[Tuple[str, str], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "trigger": self.trigger_name,
            "severity": self.severity.value,
            "source_qr": self.source_qr,
            "chain": [list(pair) for pair in self.chain],
        }


@dataclass(frozen=True)
class StructuralQoS:
    """Expected response time, cost, availability and reliability.

    Payload, battery and memory ride along so that tactic effects on them
    can be predicted with the same machinery.
    """

    response_time: float = 0.0
    cost: float = 0.0
    availability: float = 1.0
    reliability: float = 1.0
    payload_bytes: float = 0.0
    battery: float = 0.0
    memory: float = 0.0

    ATTRIBUTES = (
        "response_time", "cost", "availability", "reliability",
        "payload_bytes", "battery", "memory",
    )

    def to_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in self.ATTRIBUTES}

    def with_values(self, **values: float) -> "StructuralQoS":
        return replace(self, **values)

    def prefixed(self, prefix: str) -> Dict[str, float]:
        return {f"{prefix}{name}": value for name, value in self.to_dict().items()}


IDENTITY_QOS = StructuralQoS()


@dataclass
class ResourceCounters:
    """Client-device resources consumed by connectors."""

    battery: float = 0.0
    memory: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"battery": self.battery, "memory": self.memory}
