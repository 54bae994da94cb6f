"""Runtime layer: components, connectors and the bindings between them."""

import copy
import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, Iterator, List, Optional, Set, Tuple, Union

from models.qos import QualityLevel
from models.spec import FuzzyMeasure, MeasurablePropertySpec, PropertyKind, ProviderProfile
from utils.expressions import Expression


class ConnectorType(str, enum.Enum):
    """Kinds of connectors; each kind fixes how messages are routed."""
    SIMPLE = "Simple"
    SEQ_IN = "SeqIn"
    SEQ_OUT = "SeqOut"
    SEL_IN = "SelIn"
    SEL_OUT = "SelOut"
    PAR_IN = "ParIn"
    PAR_OUT = "ParOut"
    LOOP_IN = "LoopIn"
    LOOP_OUT = "LoopOut"
    BLOCK_START = "BlockStart"
    BLOCK_END = "BlockEnd"
    PARALLEL_OUT = "ParallelOut"
    PARALLEL_IN = "ParallelIn"
    SERIAL_OUT = "SerialOut"
    SERIAL_IN = "SerialIn"
    COMPRESSOR_OUT = "CompressorOut"
    COMPRESSOR_IN = "CompressorIn"
    DATA_MODIFIER_OUT = "DataModifierOut"
    DATA_MODIFIER_IN = "DataModifierIn"
    CACHE_ELEMENT = "CacheElement"
    CONDITION = "Condition"
    QUEUE = "Queue"


class InterceptorKind(str, enum.Enum):
    """Events an interceptor can report."""
    BLOCK_ENTRY = "block_entry"
    BLOCK_EXIT = "block_exit"
    FAILURE = "failure"
    COUNT = "count"
    DATA_VALUE = "data_value"
    CONSTRAINT_CHECK = "constraint_check"


AFTER_KINDS = frozenset(
    {InterceptorKind.BLOCK_EXIT, InterceptorKind.FAILURE, InterceptorKind.COUNT,
     InterceptorKind.DATA_VALUE, InterceptorKind.CONSTRAINT_CHECK}
)


def supported_interceptor_kinds(con_type: ConnectorType) -> frozenset:
    """Interceptor kinds a connector of ``con_type`` can host."""
    if con_type == ConnectorType.BLOCK_START:
        return frozenset({InterceptorKind.BLOCK_ENTRY})
    return AFTER_KINDS


@dataclass
class ServiceComponent:
    """A running service bound to one provider."""

    id: str
    sc_type: str
    provider: ProviderProfile

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "sc_type": self.sc_type, "provider": self.provider.provider_id}


@dataclass(frozen=True)
class InterceptorSpec:
    """Observation hook placed on a connector on behalf of a checkpoint."""

    id: str
    connector_id: str
    checkpoint_id: str
    event_kinds: Tuple[InterceptorKind, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "connector": self.connector_id,
            "checkpoint": self.checkpoint_id,
            "event_kinds": [k.value for k in self.event_kinds],
        }


@dataclass
class ConnectorModel:
    id: str
    con_type: ConnectorType
    params: Dict[str, Any] = field(default_factory=dict)
    installed_interceptors: List[InterceptorSpec] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"id": self.id, "type": self.con_type.value}
        if self.params:
            data["params"] = dict(self.params)
        if self.installed_interceptors:
            data["interceptors"] = [i.id for i in self.installed_interceptors]
        return data


@dataclass(frozen=True)
class Binding:
    source: str
    target: str

    def to_dict(self) -> Dict[str, str]:
        return {"source": self.source, "target": self.target}


@dataclass
class RoutingTable:
    """Components, connectors and ordered out-bindings.

    The position of a target in ``outs[node]`` carries meaning for some
    connectors (branch index, back-edge, primary/secondary), so rewrites
    replace targets in place.
    """

    components: Dict[str, ServiceComponent] = field(default_factory=dict)
    connectors: Dict[str, ConnectorModel] = field(default_factory=dict)
    outs: Dict[str, List[str]] = field(default_factory=dict)

    def has_node(self, node_id: str) -> bool:
        return node_id in self.components or node_id in self.connectors

    def is_component(self, node_id: str) -> bool:
        return node_id in self.components

    def out_bindings(self, node_id: str) -> List[str]:
        return list(self.outs.get(node_id, ()))

    def in_bindings(self, node_id: str) -> List[str]:
        return sorted(src for src, targets in self.outs.items() if node_id in targets)

    def bindings(self) -> List[Binding]:
        return [Binding(src, dst) for src in sorted(self.outs) for dst in self.outs[src]]

    def edges(self) -> Set[Tuple[str, str]]:
        return {(b.source, b.target) for b in self.bindings()}

    def copy(self) -> "RoutingTable":
        return copy.deepcopy(self)


@dataclass
class ProcessBlock:
    """A labeled process delimited by a BlockStart and a BlockEnd connector."""

    id: str
    label: str
    path: str
    start_connector: str
    end_connector: str
    members: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "label": self.label,
            "path": self.path,
            "start": self.start_connector,
            "end": self.end_connector,
            "members": list(self.members),
        }


@dataclass
class Checkpoint:
    """Turns interceptor events, or base measurements, into measurements."""

    id: str
    property_name: str
    kind: PropertyKind
    spec: MeasurablePropertySpec
    block_id: str
    source_interceptors: List[str] = field(default_factory=list)
    inputs: List[str] = field(default_factory=list)
    window_ms: Optional[int] = None
    expression: Optional[Expression] = None
    pending: Dict[int, int] = field(default_factory=dict)
    inherited: Set[int] = field(default_factory=set)
    count: int = 0
    samples: Deque[Tuple[int, float]] = field(default_factory=deque)
    latest: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "property": self.property_name,
            "kind": self.kind.value,
            "block": self.block_id,
            "interceptors": list(self.source_interceptors),
            "inputs": list(self.inputs),
        }


@dataclass
class EvaluationUnit:
    """Classifies measurements of one requirement and raises triggers."""

    id: str
    requirement_name: str
    fuzzy: FuzzyMeasure
    trigger: str
    target_label: str
    last_level: QualityLevel = QualityLevel.ACCEPTABLE
    last_value: Optional[float] = None
    samples: Deque[Tuple[int, float]] = field(default_factory=deque)
    history: List[Tuple[int, QualityLevel]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "requirement": self.requirement_name,
            "trigger": self.trigger,
            "target": self.target_label,
            "fuzzy": self.fuzzy.model_dump(mode="json"),
        }


@dataclass(frozen=True)
class CompiledTactic:
    """Tactic invocation with arguments resolved to runtime identifiers."""

    kind: str
    arguments: Tuple[str, ...]
    params: Tuple[Tuple[str, Any], ...] = ()
    pre_assumptions: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tactic": self.kind,
            "args": list(self.arguments),
            "params": dict(self.params),
            "pre_assumptions": list(self.pre_assumptions),
        }


@dataclass(frozen=True)
class CompiledAlternative:
    variations: Tuple[Tuple["CompiledNode", ...], ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"alternative": [[n.to_dict() for n in v] for v in self.variations]}


@dataclass(frozen=True)
class CompiledEmit:
    name: str

    def to_dict(self) -> Dict[str, Any]:
        return {"emit": self.name}


CompiledNode = Union[CompiledTactic, CompiledAlternative, CompiledEmit]


@dataclass(frozen=True)
class AdaptationPattern:
    """Executable form of an adaptation plan."""

    id: str
    trigger: str
    flow: Tuple[CompiledNode, ...]
    pre_assumptions: Tuple[str, ...] = ()
    false_assumptions: Tuple[Tuple[str, str], ...] = ()
    order: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "trigger": self.trigger,
            "flow": [n.to_dict() for n in self.flow],
            "pre_assumptions": list(self.pre_assumptions),
            "false_assumptions": [
                {"severity": severity, "assumption": name}
                for severity, name in self.false_assumptions
            ],
        }


@dataclass
class RuntimeModel:
    """Components and connectors realizing one adaptive process model."""

    table: RoutingTable
    process_blocks: Dict[str, ProcessBlock] = field(default_factory=dict)
    checkpoints: Dict[str, Checkpoint] = field(default_factory=dict)
    evaluation_units: Dict[str, EvaluationUnit] = field(default_factory=dict)
    adaptation_patterns: List[AdaptationPattern] = field(default_factory=list)
    node_paths: Dict[str, str] = field(default_factory=dict)
    labels: Dict[str, str] = field(default_factory=dict)
    root_block: str = ""

    @property
    def components(self) -> Dict[str, ServiceComponent]:
        return self.table.components

    @property
    def connectors(self) -> Dict[str, ConnectorModel]:
        return self.table.connectors

    @property
    def bindings(self) -> List[Binding]:
        return self.table.bindings()

    def interceptors(self) -> Iterator[InterceptorSpec]:
        for connector in self.connectors.values():
            yield from connector.installed_interceptors

    def block_for_label(self, label: str) -> Optional[ProcessBlock]:
        block_id = self.labels.get(label)
        if block_id in self.process_blocks:
            return self.process_blocks[block_id]
        return next((b for b in self.process_blocks.values() if b.label == label), None)

    def to_dict(self) -> Dict[str, Any]:
        """Serialize as a deterministic JSON-ready structure."""
        return {
            "components": [c.to_dict() for _, c in sorted(self.components.items())],
            "connectors": [c.to_dict() for _, c in sorted(self.connectors.items())],
            "bindings": [b.to_dict() for b in self.bindings],
            "process_blocks": [b.to_dict() for _, b in sorted(self.process_blocks.items())],
            "checkpoints": [c.to_dict() for _, c in sorted(self.checkpoints.items())],
            "interceptors": [i.to_dict() for i in sorted(self.interceptors(), key=lambda i: i.id)],
            "evaluation_units": [u.to_dict() for _, u in sorted(self.evaluation_units.items())],
            "adaptation_patterns": [p.to_dict() for p in self.adaptation_patterns],
        }
