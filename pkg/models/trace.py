"""Trace events and run reports."""

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, List


class TraceKind(enum.Enum):
    INVOKE = "invoke"
    COMPLETE = "complete"
    FAIL = "fail"
    MEASURE = "measure"
    CLASSIFY = "classify"
    TRIGGER = "trigger"
    PLAN_SELECTED = "plan_selected"
    TACTIC_APPLIED = "tactic_applied"
    PLAN_REJECTED = "plan_rejected"
    FALSIFICATION = "falsification"
    RECONFIGURE = "reconfigure"
    SCENARIO_EVENT = "scenario_event"


# Payload fields every event of a kind carries
REQUIRED_FIELDS: Dict[TraceKind, tuple] = {
    TraceKind.INVOKE: ("instance", "component", "provider"),
    TraceKind.COMPLETE: ("instance",),
    TraceKind.FAIL: ("instance", "reason"),
    TraceKind.MEASURE: ("property", "value"),
    TraceKind.CLASSIFY: ("requirement", "value", "level"),
    TraceKind.TRIGGER: ("trigger", "severity"),
    TraceKind.PLAN_SELECTED: ("pattern", "trigger", "score"),
    TraceKind.TACTIC_APPLIED: ("pattern", "tactic", "args"),
    TraceKind.PLAN_REJECTED: ("trigger", "reason"),
    TraceKind.FALSIFICATION: ("assumption", "severity"),
    TraceKind.RECONFIGURE: ("actions",),
    TraceKind.SCENARIO_EVENT: ("action",),
}


@dataclass(frozen=True)
class TraceEvent:
    """One line of the trace stream."""

    t: int
    kind: TraceKind
    payload: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "kind": self.kind.value, **self.payload}


@dataclass
class RunReport:
    """Summary of one simulated run."""

    seed: int
    horizon_ms: int
    instances_launched: int = 0
    instances_completed: int = 0
    instances_failed: int = 0
    adaptations: Dict[str, int] = field(default_factory=dict)
    time_in_band: Dict[str, Dict[str, float]] = field(default_factory=dict)
    final_levels: Dict[str, str] = field(default_factory=dict)
    resources: Dict[str, float] = field(default_factory=dict)
    chain_guard_blocks: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "horizon_ms": self.horizon_ms,
            "instances": {
                "launched": self.instances_launched,
                "completed": self.instances_completed,
                "failed": self.instances_failed,
            },
            "adaptations": dict(sorted(self.adaptations.items())),
            "time_in_band": {k: dict(v) for k, v in sorted(self.time_in_band.items())},
            "final_levels": dict(sorted(self.final_levels.items())),
            "resources": dict(self.resources),
            "chain_guard_blocks": self.chain_guard_blocks,
        }
