"""Specification layer: the adaptive process model document.

An adaptive process model couples a structured workflow over abstract
services with the quality requirements the workflow must meet and the
adaptation plans that restore them. The document is JSON; field names are
fixed and unknown fields are rejected.
"""

from enum import Enum
from typing import Dict, Iterator, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

ROOT_LABEL = "root"
FALSIFY_PREFIX = "Falsify: "


def falsify_trigger(assumption: str) -> str:
    """Name of the trigger raised when ``assumption`` is falsified."""
    return f"{FALSIFY_PREFIX}{assumption}"


class SpecModel(BaseModel):
    """Base for document types: immutable, strict about unknown fields."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class NodeKind(str, Enum):
    """Workflow constructs."""
    SEQ = "seq"
    LOOP = "loop"
    SEL = "sel"
    AND_PAR = "and_par"
    OPT = "opt"
    SERVICE = "service"


class ProcessNode(SpecModel):
    """A node of the workflow tree."""

    kind: NodeKind
    label: Optional[str] = None
    children: List["ProcessNode"] = Field(default_factory=list)
    k: Optional[int] = None
    probabilities: Optional[List[float]] = None
    service: Optional[str] = None

    @field_validator("kind", mode="before")
    @classmethod
    def _lower_kind(cls, value):
        return value.lower() if isinstance(value, str) else value

    def walk(self, path: str = ROOT_LABEL) -> Iterator[Tuple[str, "ProcessNode"]]:
        """Yield ``(path, node)`` in pre-order; child ``i`` of ``p`` is ``p.i``."""
        yield path, self
        for i, child in enumerate(self.children):
            yield from child.walk(f"{path}.{i}")

    def service_names(self) -> List[str]:
        """Services invoked by this subtree, in document order."""
        return [node.service for _, node in self.walk() if node.kind == NodeKind.SERVICE]

    def display_name(self, path: str) -> str:
        return self.label or path

    def opt_probability(self, default: float) -> float:
        """Probability that an Opt node executes its child."""
        if self.probabilities:
            return self.probabilities[0]
        return default


class ProviderProfile(SpecModel):
    """A concrete provider of an abstract service."""

    provider_id: str
    latency_mean_ms: Optional[float] = None
    latency_stddev_ms: float = 0.0
    failure_probability: float = 0.0
    cost: float = 0.0
    payload_bytes: float = 0.0


class ServiceSpec(SpecModel):
    """An abstract service and its candidate providers; the first is bound."""

    name: str
    providers: List[ProviderProfile]


class PropertyKind(str, Enum):
    """Kinds of measurable properties."""
    TIME = "time"
    DATA = "data"
    FAILURE = "failure"
    COUNT = "count"
    CONSTRAINT = "constraint"
    DERIVED = "derived"
    AGGREGATED = "aggregated"


DATA_FIELDS = ("payload_bytes", "cost", "latency_ms", "battery", "memory")
AGGREGATE_FUNCTIONS = ("sum", "average", "min", "max", "ratio")


class MeasurablePropertySpec(SpecModel):
    """A property measured at a process block.

    Derived properties name their ``inputs`` and combine them with a
    ``formula`` or a registered ``function``. Aggregated properties apply
    ``function`` to samples of ``base`` over a time window. Inputs and bases
    are either names of properties declared elsewhere or inline
    declarations measured at the same block.
    """

    kind: PropertyKind
    name: str
    data_field: Optional[str] = Field(default=None, alias="field")
    expression: Optional[str] = None
    inputs: Optional[List[Union[str, "MeasurablePropertySpec"]]] = None
    formula: Optional[str] = None
    function: Optional[str] = None
    base: Optional[Union[str, "MeasurablePropertySpec"]] = None
    window_ms: Optional[int] = None

    @field_validator("kind", mode="before")
    @classmethod
    def _lower_kind(cls, value):
        return value.lower() if isinstance(value, str) else value

    def dependencies(self) -> List[Union[str, "MeasurablePropertySpec"]]:
        if self.kind == PropertyKind.DERIVED:
            return list(self.inputs or [])
        if self.kind == PropertyKind.AGGREGATED and self.base is not None:
            return [self.base]
        return []

    def dependency_names(self) -> List[str]:
        return [d if isinstance(d, str) else d.name for d in self.dependencies()]


class WindowInterval(SpecModel):
    window_ms: int


class FuzzyMeasure(SpecModel):
    """Three-band classification of a property value.

    For orientation ``-`` smaller values are better: up to ``x1`` is
    acceptable, above ``x2`` unacceptable. Orientation ``+`` mirrors this.
    Both boundaries belong to the tolerable band.
    """

    orientation: Literal["+", "-"]
    x1: float
    x2: float
    interval: Union[Literal["per_instance"], WindowInterval] = "per_instance"

    @property
    def window_ms(self) -> Optional[int]:
        if isinstance(self.interval, WindowInterval):
            return self.interval.window_ms
        return None


class QualityRequirement(SpecModel):
    """A fuzzy requirement on a property of a labeled process."""

    target_label: str = Field(alias="target")
    measurable: MeasurablePropertySpec = Field(alias="property")
    fuzzy: FuzzyMeasure
    trigger: str

    @property
    def name(self) -> str:
        return self.measurable.name


class TacticInvocation(SpecModel):
    """Apply one tactic, guarded by assumptions that must hold."""

    tactic_kind: str = Field(alias="tactic")
    arguments: List[str] = Field(default_factory=list, alias="args")
    pre_assumptions: List[str] = Field(default_factory=list)
    params: Dict[str, Union[float, str]] = Field(default_factory=dict)


class Alternative(SpecModel):
    """Ordered variations; the first one whose preconditions hold is taken."""

    variations: List[List["FlowNode"]] = Field(alias="alternative")


class EmitTrigger(SpecModel):
    """Raise a trigger; ``Falsify: X`` also falsifies assumption X."""

    name: str = Field(alias="emit")


FlowNode = Union[TacticInvocation, Alternative, EmitTrigger]


class Falsification(SpecModel):
    severity: Literal["hard", "soft"]
    assumption: str

    @property
    def trigger_name(self) -> str:
        return falsify_trigger(self.assumption)


class AdaptationPlan(SpecModel):
    """Adaptation flow executed when ``trigger`` fires."""

    trigger: str
    flow: List[FlowNode] = Field(default_factory=list)
    pre_assumptions: List[str] = Field(default_factory=list)
    false_assumptions: List[Falsification] = Field(default_factory=list)


class ScenarioAction(str, Enum):
    SET_PROVIDER_LATENCY = "set_provider_latency"
    SET_PROVIDER_FAILURE = "set_provider_failure"
    SET_BANDWIDTH = "set_bandwidth"
    ASSERT_ASSUMPTION = "assert_assumption"
    RETRACT_ASSUMPTION = "retract_assumption"
    START_INSTANCES = "start_instances"


class ScenarioEvent(SpecModel):
    """A timed change of the simulated environment."""

    at_ms: int
    action: ScenarioAction
    provider: Optional[str] = None
    mean: Optional[float] = None
    stddev: Optional[float] = None
    p: Optional[float] = None
    bytes_per_ms: Optional[float] = None
    name: Optional[str] = None
    rate_per_s: Optional[float] = None


class ScenarioScript(SpecModel):
    seed: int = 0
    horizon_ms: int
    events: List[ScenarioEvent] = Field(default_factory=list)


class AdaptiveProcessModel(SpecModel):
    """The whole document."""

    workflow: ProcessNode
    service_catalog: List[ServiceSpec] = Field(alias="services")
    quality_requirements: List[QualityRequirement] = Field(default_factory=list)
    adaptation_plans: List[AdaptationPlan] = Field(default_factory=list)
    scenario: Optional[ScenarioScript] = None

    def service(self, name: str) -> Optional[ServiceSpec]:
        return next((s for s in self.service_catalog if s.name == name), None)

    def provider(self, provider_id: str) -> Optional[Tuple[ServiceSpec, ProviderProfile]]:
        for spec in self.service_catalog:
            for profile in spec.providers:
                if profile.provider_id == provider_id:
                    return spec, profile
        return None

    def labeled_nodes(self) -> Dict[str, Tuple[str, ProcessNode]]:
        """Map label to ``(path, node)``; the root is always ``root``."""
        labels: Dict[str, Tuple[str, ProcessNode]] = {ROOT_LABEL: (ROOT_LABEL, self.workflow)}
        for path, node in self.workflow.walk():
            if node.label:
                labels[node.label] = (path, node)
        return labels

    def declared_properties(self) -> Dict[str, Tuple[MeasurablePropertySpec, str]]:
        """Every property declared by a requirement, inline ones included.

        Returns a map from property name to ``(spec, target_label)``.
        """
        declared: Dict[str, Tuple[MeasurablePropertySpec, str]] = {}

        def visit(spec: MeasurablePropertySpec, target: str) -> None:
            declared.setdefault(spec.name, (spec, target))
            for dep in spec.dependencies():
                if not isinstance(dep, str):
                    visit(dep, target)

        for requirement in self.quality_requirements:
            visit(requirement.measurable, requirement.target_label)
        return declared


ProcessNode.model_rebuild()
MeasurablePropertySpec.model_rebuild()
Alternative.model_rebuild()
AdaptationPlan.model_rebuild()
AdaptiveProcessModel.model_rebuild()
