"""Domain types of the adaptive process engine."""

from .spec import AdaptiveProcessModel, ProcessNode, QualityRequirement, AdaptationPlan, ScenarioScript
from .qos import QualityLevel, Severity, Measurement, TriggerEvent, StructuralQoS
from .runtime import RuntimeModel, RoutingTable, ConnectorType, InterceptorKind
from .trace import TraceKind, TraceEvent, RunReport

__all__ = [
    "AdaptiveProcessModel",
    "ProcessNode",
    "QualityRequirement",
    "AdaptationPlan",
    "ScenarioScript",
    "QualityLevel",
    "Severity",
    "Measurement",
    "TriggerEvent",
    "StructuralQoS",
    "RuntimeModel",
    "RoutingTable",
    "ConnectorType",
    "InterceptorKind",
    "TraceKind",
    "TraceEvent",
    "RunReport",
]
