"""Change actions, tactic templates and their concrete instances."""

from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from models.patterns import StatePattern, Term, Var, resolve
from models.qos import StructuralQoS
from models.runtime import ConnectorType


@dataclass(frozen=True)
class AddConnector:
    con_id: Term
    con_type: ConnectorType
    params: Tuple[Tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class RemoveConnector:
    con_id: Term


@dataclass(frozen=True)
class AddBinding:
    source: Term
    target: Term


@dataclass(frozen=True)
class RemoveBinding:
    source: Term
    target: Term


@dataclass(frozen=True)
class SetConnectorParam:
    con_id: Term
    key: str
    value: Any


@dataclass(frozen=True)
class AddComponent:
    sc_id: Term
    sc_type: str
    provider_id: str


@dataclass(frozen=True)
class RemoveComponent:
    sc_id: Term


@dataclass(frozen=True)
class ForEachInBinding:
    """Redirect every binding into ``node`` so that it targets ``new_target``."""
    node: Term
    new_target: Term


@dataclass(frozen=True)
class ForEachOutBinding:
    """Move every binding out of ``node`` to ``new_source``; copy if ``keep``."""
    node: Term
    new_source: Term
    keep: bool = False


ChangeAction = Union[
    AddConnector, RemoveConnector, AddBinding, RemoveBinding, SetConnectorParam,
    AddComponent, RemoveComponent, ForEachInBinding, ForEachOutBinding,
]


def substitute_action(action: ChangeAction, bindings: Mapping[str, str]) -> ChangeAction:
    """Resolve every variable of a change action."""
    updates: Dict[str, Any] = {}
    for f in fields(action):
        value = getattr(action, f.name)
        if f.name == "params":
            value = tuple((k, resolve(v, bindings)) for k, v in value)
        else:
            value = resolve(value, bindings)
        updates[f.name] = value
    return replace(action, **updates)


def action_to_dict(action: ChangeAction) -> Dict[str, Any]:
    data: Dict[str, Any] = {"action": type(action).__name__}
    for f in fields(action):
        value = getattr(action, f.name)
        if isinstance(value, Var):
            value = str(value)
        elif isinstance(value, ConnectorType):
            value = value.value
        elif f.name == "params":
            value = {k: str(v) if isinstance(v, Var) else v for k, v in value}
        data[f.name] = value
    return data


@dataclass(frozen=True)
class EffectFormula:
    """Post-adaptation value of one QoS attribute of the affected block."""

    attribute: str
    expression: str


@dataclass(frozen=True)
class TacticRole:
    """A positional tactic argument.

    ``role`` is ``component`` (a service in the workflow), ``node`` (a
    service or a labeled block), ``service`` (a catalog service or provider
    brought in from standby), ``expr`` (a condition expression), ``modifier``
    (a registered data modifier) or ``filter`` (a registered cache filter).
    """

    name: str
    role: str
    optional: bool = False

    @property
    def resolves_to_node(self) -> bool:
        return self.role in ("component", "node", "service")


@dataclass(frozen=True)
class TacticTemplate:
    kind: str
    roles: Tuple[TacticRole, ...]
    supporting_connectors: Tuple[ConnectorType, ...]
    precondition: StatePattern
    pre_state: StatePattern
    change_actions: Tuple[ChangeAction, ...]
    post_state: StatePattern
    expected_effect: Tuple[EffectFormula, ...] = ()
    fresh: Tuple[Tuple[str, ConnectorType], ...] = ()
    default_params: Tuple[Tuple[str, Any], ...] = ()
    alternate_role: Optional[str] = None
    substitutes_anchor: bool = False
    description: str = ""

    @property
    def arity(self) -> Tuple[int, int]:
        required = sum(1 for r in self.roles if not r.optional)
        return required, len(self.roles)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "description": self.description,
            "roles": [{"name": r.name, "role": r.role, "optional": r.optional} for r in self.roles],
            "supporting_connectors": [c.value for c in self.supporting_connectors],
            "precondition": self.precondition.describe(),
            "pre_state": self.pre_state.describe(),
            "change_actions": [action_to_dict(a) for a in self.change_actions],
            "post_state": self.post_state.describe(),
            "expected_effect": {e.attribute: e.expression for e in self.expected_effect},
            "default_params": dict(self.default_params),
        }


@dataclass
class ConcreteTactic:
    """A template bound to runtime identifiers, ready to enact."""

    kind: str
    arguments: Tuple[str, ...]
    bindings: Dict[str, str]
    batch: Tuple[ChangeAction, ...]
    post_state: StatePattern
    expected_effect: Tuple[EffectFormula, ...]
    params: Dict[str, Any] = field(default_factory=dict)
    alt_qos: Optional[StructuralQoS] = None
    context: Dict[str, float] = field(default_factory=dict)

    @property
    def anchor(self) -> str:
        """Runtime element whose QoS the tactic changes."""
        return self.arguments[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tactic": self.kind,
            "args": list(self.arguments),
            "bindings": dict(sorted(self.bindings.items())),
            "batch": [action_to_dict(a) for a in self.batch],
            "params": dict(self.params),
        }

