"""Propositions held by the context model."""

from dataclasses import dataclass, fields
from typing import Any, ClassVar, Dict, Tuple, Union

from models.qos import QualityLevel

# Property names the engine itself maintains
LINK_BANDWIDTH = "link.bandwidth_bytes_per_ms"
BATTERY_USED = "resources.battery"
MEMORY_USED = "resources.memory"


@dataclass(frozen=True)
class IsComponent:
    sc: str
    predicate: ClassVar[str] = "IsComponent"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.sc)


@dataclass(frozen=True)
class ComponentType:
    """Type (abstract service) of a service component; one per component."""
    sc: str
    sc_type: str
    predicate: ClassVar[str] = "ComponentType"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.sc)


@dataclass(frozen=True)
class IsConnector:
    con: str
    predicate: ClassVar[str] = "IsConnector"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.con)


@dataclass(frozen=True)
class ConnectorType:
    con: str
    con_type: str
    predicate: ClassVar[str] = "ConnectorType"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.con)


@dataclass(frozen=True)
class Bind:
    """Output of ``source`` feeds the input of ``target``."""
    source: str
    target: str
    predicate: ClassVar[str] = "Bind"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.source, self.target)


@dataclass(frozen=True)
class PropertyValue:
    name: str
    value: float
    predicate: ClassVar[str] = "PropertyValue"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.name)


@dataclass(frozen=True)
class QualityOf:
    """Current band of a quality requirement."""
    name: str
    level: QualityLevel
    predicate: ClassVar[str] = "QualityLevel"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.name)


@dataclass(frozen=True)
class Assumption:
    name: str
    value: bool
    predicate: ClassVar[str] = "Assumption"

    @property
    def key(self) -> Tuple:
        return (self.predicate, self.name)


Proposition = Union[
    IsComponent, ComponentType, IsConnector, ConnectorType, Bind,
    PropertyValue, QualityOf, Assumption,
]


def proposition_to_dict(fact: Proposition) -> Dict[str, Any]:
    """Serialize a proposition as ``{"predicate": ..., <fields>}``."""
    data: Dict[str, Any] = {"predicate": fact.predicate}
    for f in fields(fact):
        value = getattr(fact, f.name)
        data[f.name] = value.value if isinstance(value, QualityLevel) else value
    return data
