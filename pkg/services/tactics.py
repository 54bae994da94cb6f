"""Adaptation tactic library.

Each tactic is a template with six parts: the connectors it introduces, a
precondition and a pre-state the context must satisfy, the change actions
that rewire the runtime model, the post-state those actions establish and
the expected effect on the QoS of the adapted element. Templates are
written over pattern variables; ``instantiate`` binds them to runtime ids
using a witness from the context model.
"""

from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from loguru import logger

from config.settings import settings
from models.context import LINK_BANDWIDTH, Bind, ComponentType, IsComponent, IsConnector
from models.context import ConnectorType as ConnectorTypeFact
from models.patterns import (
    CONNECTOR,
    NODE,
    ForAll,
    StatePattern,
    Var,
    assumption,
    bind,
    component,
    connector,
    connector_type,
    distinct,
    forall_in,
    forall_out,
    isolated,
    same_type,
)
from models.qos import StructuralQoS
from models.runtime import ConnectorType
from models.tactics import (
    AddBinding,
    AddComponent,
    AddConnector,
    ChangeAction,
    ConcreteTactic,
    EffectFormula,
    ForEachInBinding,
    ForEachOutBinding,
    RemoveBinding,
    RemoveComponent,
    RemoveConnector,
    SetConnectorParam,
    TacticRole,
    TacticTemplate,
    substitute_action,
)
from services.context_store import ContextModel, entails
from utils.errors import (
    ArityError,
    DanglingReference,
    DuplicateBinding,
    ExpressionError,
    NotFoundError,
    PreconditionFailed,
)
from utils.expressions import parse_expression

# Payload scaling applied by each named data modifier
DATA_MODIFIERS: Dict[str, float] = {
    "summary": 0.2,
    "essential": 0.4,
    "batch": 0.5,
}

# Cache filters decide from the request which messages may be served from cache
CACHE_FILTERS: Dict[str, Callable[[Mapping[str, Any]], bool]] = {
    "all": lambda request: True,
    "small_payload": lambda request: request.get("payload_bytes", 0) <= 1024,
}

# Names a re-execution condition may read
CONDITION_NAMES = frozenset({"failed", "attempts", "payload_bytes", "latency_ms"})


def register_data_modifier(name: str, factor: float) -> None:
    if not 0.0 <= factor <= 1.0:
        raise ValueError(f"data modifier factor must lie in [0, 1], got {factor}")
    DATA_MODIFIERS[name] = factor


def register_cache_filter(name: str, predicate: Callable[[Mapping[str, Any]], bool]) -> None:
    CACHE_FILTERS[name] = predicate


class TacticLibrary:
    """Registry of tactic templates, keyed by kind."""

    def __init__(self, templates: Sequence[TacticTemplate] = ()):
        self._templates: Dict[str, TacticTemplate] = {}
        for template in templates:
            self.register(template)

    def register(self, template: TacticTemplate, replace: bool = False) -> None:
        """
        Add a template.

        Args:
            template: Template to add; it may only introduce connector kinds
                listed in its supporting connectors
            replace: Allow replacing a template of the same kind

        Raises:
            ValueError: If the kind is taken or the template is inconsistent
        """
        if template.kind in self._templates and not replace:
            raise ValueError(f"tactic '{template.kind}' is already registered")
        fresh = {name for name, _ in template.fresh}
        for action in template.change_actions:
            if isinstance(action, AddConnector):
                if action.con_type not in template.supporting_connectors:
                    raise ValueError(
                        f"tactic '{template.kind}' adds a {action.con_type.value} connector "
                        "that is not among its supporting connectors"
                    )
                if not isinstance(action.con_id, Var) or action.con_id.name not in fresh:
                    raise ValueError(f"tactic '{template.kind}' adds a connector without a fresh id")
        self._templates[template.kind] = template
        logger.debug(f"Registered tactic {template.kind}")

    def get(self, kind: str) -> TacticTemplate:
        if kind not in self._templates:
            raise NotFoundError(f"unknown tactic '{kind}'", kind)
        return self._templates[kind]

    def find(self, kind: str) -> Optional[TacticTemplate]:
        return self._templates.get(kind)

    def kinds(self) -> List[str]:
        return list(self._templates)

    def check_argument(self, template: TacticTemplate, role: TacticRole, value: str) -> Optional[str]:
        """Problem with a non-node argument, or None when it is acceptable."""
        if role.role == "expr":
            try:
                unknown = parse_expression(value).names - CONDITION_NAMES
            except ExpressionError as e:
                return f"{template.kind} condition: {e}"
            if unknown:
                return f"{template.kind} condition reads unknown names {sorted(unknown)}"
        elif role.role == "modifier" and value not in DATA_MODIFIERS:
            return f"{template.kind}: unknown data modifier '{value}'"
        elif role.role == "filter" and value not in CACHE_FILTERS:
            return f"{template.kind}: unknown cache filter '{value}'"
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {"tactics": [t.to_dict() for t in self._templates.values()]}

    def __iter__(self) -> Iterator[TacticTemplate]:
        return iter(self._templates.values())

    def __len__(self) -> int:
        return len(self._templates)

    def __contains__(self, kind: str) -> bool:
        return kind in self._templates


# Templates ---------------------------------------------------------------------

R, S, E = Var("R"), Var("S"), Var("E")
E1, E2 = Var("E1"), Var("E2")
NODE_E = Var("E", NODE)
CON_X, CON_Y = Var("ConX", CONNECTOR), Var("ConY", CONNECTOR)
ANY_Y = Var("Y", NODE)
X_IN, Y_OUT = Var("X", NODE), Var("Y", NODE)


def _con(name: str) -> Var:
    return Var(name, CONNECTOR)


def _param(name: str) -> Var:
    return Var(name)


def _effects(**formulas: str) -> Tuple[EffectFormula, ...]:
    return tuple(EffectFormula(attribute, expression) for attribute, expression in formulas.items())


def _rewired_in(of: Var, new_target: Var) -> ForAll:
    return forall_in(X_IN, of, bind(X_IN, new_target))


def _rewired_out(of: Var, new_source: Var) -> ForAll:
    return forall_out(Y_OUT, of, bind(new_source, Y_OUT))


def _skip() -> TacticTemplate:
    c = _con("C")
    return TacticTemplate(
        kind="skip",
        description="Bypass a service: its neighbours are joined by a simple connector.",
        roles=(TacticRole("R", "component"),),
        supporting_connectors=(ConnectorType.SIMPLE,),
        precondition=StatePattern(atoms=(component(R),)),
        pre_state=StatePattern(atoms=(bind(CON_X, R), bind(R, CON_Y))),
        change_actions=(
            AddConnector(c, ConnectorType.SIMPLE),
            ForEachInBinding(R, c),
            ForEachOutBinding(R, c),
        ),
        post_state=StatePattern(
            atoms=(connector(c), isolated(R)),
            foralls=(_rewired_in(R, c), _rewired_out(R, c)),
        ),
        expected_effect=_effects(
            response_time="0", cost="0", availability="1", reliability="1", battery="0", memory="0",
        ),
        fresh=(("C", ConnectorType.SIMPLE),),
    )


def _add() -> TacticTemplate:
    c1, c2 = _con("C1"), _con("C2")
    return TacticTemplate(
        kind="add",
        description="Splice a standby service right after a service or a block's start.",
        roles=(TacticRole("E", "node"), TacticRole("S", "service")),
        supporting_connectors=(ConnectorType.SIMPLE,),
        precondition=StatePattern(atoms=(component(S), isolated(S), distinct(NODE_E, S))),
        pre_state=StatePattern(atoms=(bind(NODE_E, ANY_Y),)),
        change_actions=(
            AddConnector(c1, ConnectorType.SIMPLE),
            AddConnector(c2, ConnectorType.SIMPLE),
            ForEachOutBinding(NODE_E, c2),
            AddBinding(NODE_E, c1),
            AddBinding(c1, S),
            AddBinding(S, c2),
        ),
        post_state=StatePattern(
            atoms=(connector(c1), connector(c2), bind(NODE_E, c1), bind(c1, S), bind(S, c2)),
            foralls=(_rewired_out(NODE_E, c2),),
        ),
        expected_effect=_effects(
            response_time="response_time + alt_response_time",
            cost="cost + alt_cost",
            availability="availability * alt_availability",
            reliability="reliability * alt_reliability",
            payload_bytes="alt_payload_bytes",
            battery="battery + alt_battery",
            memory="memory + alt_memory",
        ),
        fresh=(("C1", ConnectorType.SIMPLE), ("C2", ConnectorType.SIMPLE)),
        alternate_role="S",
    )


def _replace() -> TacticTemplate:
    return TacticTemplate(
        kind="replace",
        description="Move every binding of a service to a standby service.",
        roles=(TacticRole("R", "component"), TacticRole("S", "service")),
        supporting_connectors=(),
        precondition=StatePattern(atoms=(component(R), component(S), isolated(S), distinct(R, S))),
        pre_state=StatePattern(atoms=(bind(CON_X, R), bind(R, CON_Y))),
        change_actions=(ForEachInBinding(R, S), ForEachOutBinding(R, S)),
        post_state=StatePattern(
            atoms=(isolated(R),),
            foralls=(_rewired_in(R, S), _rewired_out(R, S)),
        ),
        expected_effect=_effects(
            response_time="alt_response_time",
            cost="alt_cost",
            availability="alt_availability",
            reliability="alt_reliability",
            payload_bytes="alt_payload_bytes",
        ),
        alternate_role="S",
        substitutes_anchor=True,
    )


def _redundant(kind: str, out_type: ConnectorType, in_type: ConnectorType, same_kind: bool) -> TacticTemplate:
    """Fork to a second service and join the results (parallel and serial)."""
    prefix = "Parallel" if out_type == ConnectorType.PARALLEL_OUT else "Serial"
    out_con, in_con = _con(f"{prefix}OutCon"), _con(f"{prefix}InCon")
    atoms = [component(E), component(S), distinct(E, S), isolated(S)]
    if same_kind:
        atoms.insert(2, same_type(E, S))
    if kind == "parallel":
        response = "min(response_time, alt_response_time)"
        cost = "cost + alt_cost"
        description = "Invoke a same-type service alongside; the first successful response wins."
    else:
        response = "response_time + (1 - availability) * alt_response_time"
        cost = "cost + (1 - availability) * alt_cost"
        description = "Invoke a backup service only when the primary fails."
    return TacticTemplate(
        kind=kind,
        description=description,
        roles=(TacticRole("E", "component"), TacticRole("S", "service", optional=same_kind)),
        supporting_connectors=(out_type, in_type),
        precondition=StatePattern(atoms=tuple(atoms)),
        pre_state=StatePattern(atoms=(bind(CON_X, E), bind(E, CON_Y))),
        change_actions=(
            AddConnector(out_con, out_type, (("partner", in_con),)),
            AddConnector(in_con, in_type, (("partner", out_con),)),
            ForEachInBinding(E, out_con),
            ForEachOutBinding(E, in_con),
            AddBinding(out_con, E),
            AddBinding(out_con, S),
            AddBinding(E, in_con),
            AddBinding(S, in_con),
        ),
        post_state=StatePattern(
            atoms=(
                connector(out_con), connector(in_con),
                bind(out_con, E), bind(out_con, S), bind(E, in_con), bind(S, in_con),
            ),
            foralls=(_rewired_in(E, out_con), _rewired_out(E, in_con)),
        ),
        expected_effect=_effects(
            response_time=response,
            cost=cost,
            availability="1 - (1 - availability) * (1 - alt_availability)",
            reliability="1 - (1 - reliability) * (1 - alt_reliability)",
            battery="battery + alt_battery",
            memory="memory + alt_memory",
        ),
        fresh=((f"{prefix}OutCon", out_type), (f"{prefix}InCon", in_type)),
        alternate_role="S",
    )


def _reexecute(cap: int) -> TacticTemplate:
    cond = _con("CondCon")
    return TacticTemplate(
        kind="reexecute",
        description="Re-invoke a service until a condition holds or the retry cap is reached.",
        roles=(TacticRole("E", "component"), TacticRole("condition", "expr", optional=True)),
        supporting_connectors=(ConnectorType.CONDITION,),
        precondition=StatePattern(
            atoms=(component(E),),
            foralls=(forall_out(Y_OUT, E, connector_type(Y_OUT, ConnectorType.CONDITION.value, negated=True)),),
        ),
        pre_state=StatePattern(atoms=(bind(E, CON_Y),)),
        change_actions=(
            AddConnector(cond, ConnectorType.CONDITION,
                         (("cap", _param("cap")), ("condition", _param("condition")))),
            AddBinding(cond, E),
            ForEachOutBinding(E, cond),
            AddBinding(E, cond),
        ),
        post_state=StatePattern(
            atoms=(connector(cond), bind(cond, E), bind(E, cond)),
            foralls=(_rewired_out(E, cond),),
        ),
        expected_effect=_effects(
            response_time="response_time * expected_attempts(availability, cap)",
            cost="cost * expected_attempts(availability, cap)",
            availability="1 - (1 - availability) ** cap",
            reliability="1 - (1 - reliability) ** cap",
        ),
        fresh=(("CondCon", ConnectorType.CONDITION),),
        default_params=(("cap", cap), ("condition", "not failed")),
    )


def _link_pair(kind: str, out_type: ConnectorType, in_type: ConnectorType, prefix: str,
               params: Tuple[str, ...], effects: Tuple[EffectFormula, ...],
               default_params: Tuple[Tuple[str, Any], ...], description: str,
               extra_roles: Tuple[TacticRole, ...] = ()) -> TacticTemplate:
    """Transform payload after E1 and undo it before E2 (compress, aggregate)."""
    out_con, in_con = _con(f"{prefix}OutCon"), _con(f"{prefix}InCon")
    con_params = tuple((name, _param(name)) for name in params)
    return TacticTemplate(
        kind=kind,
        description=description,
        roles=(TacticRole("E1", "component"), TacticRole("E2", "component")) + extra_roles,
        supporting_connectors=(out_type, in_type),
        precondition=StatePattern(
            atoms=(component(E1), component(E2), distinct(E1, E2)),
            foralls=(forall_out(Y_OUT, E1, connector_type(Y_OUT, out_type.value, negated=True)),),
        ),
        pre_state=StatePattern(atoms=(bind(E1, CON_Y), bind(CON_X, E2))),
        change_actions=(
            AddConnector(out_con, out_type, con_params + (("partner", in_con),)),
            AddConnector(in_con, in_type, con_params + (("partner", out_con),)),
            ForEachOutBinding(E1, out_con),
            AddBinding(E1, out_con),
            ForEachInBinding(E2, in_con),
            AddBinding(in_con, E2),
        ),
        post_state=StatePattern(
            atoms=(connector(out_con), connector(in_con), bind(E1, out_con), bind(in_con, E2)),
            foralls=(_rewired_out(E1, out_con), _rewired_in(E2, in_con)),
        ),
        expected_effect=effects,
        fresh=((f"{prefix}OutCon", out_type), (f"{prefix}InCon", in_type)),
        default_params=default_params,
    )


def _compress(ratio: float, cpu_ms: int, battery_cost: float) -> TacticTemplate:
    return _link_pair(
        "compress", ConnectorType.COMPRESSOR_OUT, ConnectorType.COMPRESSOR_IN, "Comp",
        ("ratio", "cpu_ms", "battery_cost"),
        _effects(
            response_time="response_time - payload_bytes * (1 - ratio) * ms_per_byte + 2 * cpu_ms",
            battery="battery + 2 * battery_cost",
        ),
        (("ratio", ratio), ("cpu_ms", cpu_ms), ("battery_cost", battery_cost)),
        "Compress the output of E1 on the link and decompress it before E2.",
    )


def _aggregate() -> TacticTemplate:
    return _link_pair(
        "aggregate", ConnectorType.DATA_MODIFIER_OUT, ConnectorType.DATA_MODIFIER_IN, "Mod",
        ("modifier", "factor"),
        _effects(response_time="response_time - payload_bytes * (1 - factor) * ms_per_byte"),
        (),
        "Shrink the data E1 sends with a data modifier and restore it before E2.",
        extra_roles=(TacticRole("modifier", "modifier"),),
    )


def _reduce() -> TacticTemplate:
    out_con = _con("ModOutCon")
    return TacticTemplate(
        kind="reduce",
        description="Permanently shrink the output of a service with a data modifier.",
        roles=(TacticRole("E", "component"), TacticRole("modifier", "modifier")),
        supporting_connectors=(ConnectorType.DATA_MODIFIER_OUT,),
        precondition=StatePattern(
            atoms=(component(E),),
            foralls=(forall_out(Y_OUT, E, connector_type(Y_OUT, ConnectorType.DATA_MODIFIER_OUT.value,
                                                         negated=True)),),
        ),
        pre_state=StatePattern(atoms=(bind(E, CON_Y),)),
        change_actions=(
            AddConnector(out_con, ConnectorType.DATA_MODIFIER_OUT,
                         (("modifier", _param("modifier")), ("factor", _param("factor")))),
            ForEachOutBinding(E, out_con),
            AddBinding(E, out_con),
        ),
        post_state=StatePattern(
            atoms=(connector(out_con), bind(E, out_con)),
            foralls=(_rewired_out(E, out_con),),
        ),
        expected_effect=_effects(
            response_time="response_time - payload_bytes * (1 - factor) * ms_per_byte",
            payload_bytes="payload_bytes * factor",
        ),
        fresh=(("ModOutCon", ConnectorType.DATA_MODIFIER_OUT),),
    )


def _cache(hit_ratio: float) -> TacticTemplate:
    cache = _con("CacheCon")
    return TacticTemplate(
        kind="cache",
        description="Answer part of the requests to a service from a cache.",
        roles=(TacticRole("E", "component"), TacticRole("filter", "filter", optional=True)),
        supporting_connectors=(ConnectorType.CACHE_ELEMENT,),
        precondition=StatePattern(
            atoms=(component(E),),
            foralls=(forall_in(X_IN, E, connector_type(X_IN, ConnectorType.CACHE_ELEMENT.value, negated=True)),),
        ),
        pre_state=StatePattern(atoms=(bind(CON_X, E), bind(E, CON_Y))),
        change_actions=(
            AddConnector(cache, ConnectorType.CACHE_ELEMENT,
                         (("hit_ratio", _param("hit_ratio")), ("filter", _param("filter")))),
            ForEachInBinding(E, cache),
            AddBinding(cache, E),
            ForEachOutBinding(E, cache, keep=True),
        ),
        post_state=StatePattern(
            atoms=(connector(cache), bind(cache, E)),
            foralls=(
                _rewired_in(E, cache),
                _rewired_out(E, cache),
                forall_out(Y_OUT, E, bind(E, Y_OUT)),
            ),
        ),
        expected_effect=_effects(
            response_time="response_time * (1 - hit_ratio)",
            cost="cost * (1 - hit_ratio)",
            availability="hit_ratio + (1 - hit_ratio) * availability",
            reliability="hit_ratio + (1 - hit_ratio) * reliability",
        ),
        fresh=(("CacheCon", ConnectorType.CACHE_ELEMENT),),
        default_params=(("hit_ratio", hit_ratio), ("filter", "all")),
    )


def queue_template(memory_cost: float) -> TacticTemplate:
    """Store-and-forward queue after a service; holds messages while the link is down."""
    queue = _con("QueueCon")
    return TacticTemplate(
        kind="queue",
        description="Hold the output of a service while the link is down and forward it later.",
        roles=(TacticRole("E", "component"),),
        supporting_connectors=(ConnectorType.QUEUE,),
        precondition=StatePattern(
            atoms=(component(E),),
            foralls=(forall_out(Y_OUT, E, connector_type(Y_OUT, ConnectorType.QUEUE.value, negated=True)),),
        ),
        pre_state=StatePattern(atoms=(bind(E, CON_Y),)),
        change_actions=(
            AddConnector(queue, ConnectorType.QUEUE, (("memory_cost", _param("memory_cost")),)),
            ForEachOutBinding(E, queue),
            AddBinding(E, queue),
        ),
        post_state=StatePattern(
            atoms=(connector(queue), bind(E, queue)),
            foralls=(_rewired_out(E, queue),),
        ),
        expected_effect=_effects(memory="memory + memory_cost"),
        fresh=(("QueueCon", ConnectorType.QUEUE),),
        default_params=(("memory_cost", memory_cost),),
    )


def builtin_templates() -> List[TacticTemplate]:
    """The ten built-in tactics with defaults taken from the current settings."""
    return [
        _skip(),
        _add(),
        _replace(),
        _redundant("parallel", ConnectorType.PARALLEL_OUT, ConnectorType.PARALLEL_IN, same_kind=True),
        _redundant("serial", ConnectorType.SERIAL_OUT, ConnectorType.SERIAL_IN, same_kind=False),
        _reexecute(settings.REEXECUTE_CAP),
        _compress(settings.COMPRESSION_RATIO, settings.COMPRESSION_CPU_MS, settings.COMPRESSION_BATTERY_COST),
        _aggregate(),
        _reduce(),
        _cache(settings.CACHE_HIT_RATIO),
    ]


def default_library() -> TacticLibrary:
    """Built-in tactics plus the queue tactic, registered as an extension."""
    library = TacticLibrary(builtin_templates())
    library.register(queue_template(settings.QUEUE_MEMORY_COST))
    return library


# Instantiation -------------------------------------------------------------------


def fresh_id(ctx: ContextModel, name: str, taken: Sequence[str] = ()) -> str:
    """First ``tactic.<name>#<n>`` id not used in the context."""
    n = 1
    while True:
        candidate = f"tactic.{name}#{n}"
        if candidate not in taken and not ctx.is_connector(candidate) and not ctx.is_component(candidate):
            return candidate
        n += 1


def _node_domain(ctx: ContextModel, node: str, over: str) -> Tuple[str, ...]:
    if not (ctx.is_component(node) or ctx.is_connector(node)):
        return ()
    return tuple(ctx.in_bindings(node) if over == "in" else ctx.out_bindings(node))


def _freeze_domains(pattern: StatePattern, ctx: ContextModel) -> StatePattern:
    """Pin every universal clause to the bindings its node has in ``ctx``."""
    frozen = []
    for clause in pattern.foralls:
        if clause.members is None and not isinstance(clause.of, Var):
            clause = ForAll(clause.var, clause.over, clause.of, clause.body,
                            members=_node_domain(ctx, clause.of, clause.over))
        frozen.append(clause)
    return StatePattern(pattern.atoms, tuple(frozen))


def link_ms_per_byte(ctx: ContextModel) -> float:
    """Transit time per byte on the current link; 0 when unlimited or down."""
    bandwidth = ctx.value(LINK_BANDWIDTH)
    if not bandwidth or bandwidth <= 0:
        return 0.0
    return 1.0 / bandwidth


def instantiate(
    kind: str,
    arguments: Sequence[str],
    ctx: ContextModel,
    library: Optional[TacticLibrary] = None,
    params: Optional[Mapping[str, Any]] = None,
    pre_assumptions: Sequence[str] = (),
    alt_qos_of: Optional[Callable[[str], Optional[StructuralQoS]]] = None,
) -> ConcreteTactic:
    """
    Bind a tactic template to runtime ids.

    Args:
        kind: Tactic kind
        arguments: Runtime ids for node roles, plain values for other roles
        ctx: Context model the precondition is checked against
        library: Tactic library; the default library when omitted
        params: Overrides of the template's default parameters
        pre_assumptions: Assumptions the invocation requires
        alt_qos_of: QoS of a component, used for the alternate service

    Returns:
        ConcreteTactic with its change-action batch and bound post-state

    Raises:
        ArityError: If the argument count does not fit the template
        PreconditionFailed: Naming the first unsatisfied conjunct
    """
    library = library or default_library()
    template = library.get(kind)
    low, high = template.arity
    if not low <= len(arguments) <= high:
        raise ArityError(f"{kind} takes {low}-{high} arguments, got {len(arguments)}", kind)

    bindings: Dict[str, str] = {}
    values: Dict[str, Any] = dict(template.default_params)
    for role, value in zip(template.roles, arguments):
        if role.resolves_to_node:
            bindings[role.name] = value
        else:
            values[role.name] = value
    values.update(params or {})
    if "modifier" in values and "factor" not in values:
        values["factor"] = DATA_MODIFIERS[values["modifier"]]

    pattern = template.precondition.conjoin(template.pre_state)
    pattern = pattern.conjoin(StatePattern(atoms=tuple(assumption(name) for name in pre_assumptions)))
    result = entails(ctx, pattern, bindings)
    if not result.holds:
        raise PreconditionFailed(
            f"{kind}({', '.join(arguments)}): precondition not satisfied: {result.failed}",
            result.failed,
            arguments[0] if arguments else kind,
        )

    witness = dict(result.witness)
    for name, _ in template.fresh:
        witness[name] = fresh_id(ctx, name, list(witness.values()))

    resolved = {**values, **witness}
    batch = tuple(substitute_action(action, resolved) for action in template.change_actions)
    post_state = _freeze_domains(template.post_state.substitute(witness), ctx)

    alt_qos = None
    if template.alternate_role and alt_qos_of is not None:
        alt_qos = alt_qos_of(witness[template.alternate_role])

    role_values = [witness.get(role.name, values.get(role.name)) for role in template.roles]
    return ConcreteTactic(
        kind=kind,
        arguments=tuple(str(v) for v in role_values if v is not None),
        bindings=witness,
        batch=batch,
        post_state=post_state,
        expected_effect=template.expected_effect,
        params=values,
        alt_qos=alt_qos,
        context={"ms_per_byte": link_ms_per_byte(ctx)},
    )


# Applying batches to the context ----------------------------------------------------


def _require(ctx: ContextModel, node: str, action: ChangeAction) -> None:
    if not (ctx.is_component(node) or ctx.is_connector(node)):
        raise DanglingReference(f"{type(action).__name__} references unknown element '{node}'", node)


def _require_new(ctx: ContextModel, node: str) -> None:
    if ctx.is_component(node) or ctx.is_connector(node):
        raise DuplicateBinding(f"element '{node}' already exists", node)


def _add_bind(ctx: ContextModel, source: str, target: str) -> None:
    if ctx.has_binding(source, target):
        raise DuplicateBinding(f"binding {source} -> {target} already exists", f"{source}->{target}")
    ctx.assert_fact(Bind(source, target))


def _drop_element(ctx: ContextModel, node: str) -> None:
    for source in ctx.in_bindings(node):
        ctx.retract_fact(Bind(source, node))
    for target in ctx.out_bindings(node):
        ctx.retract_fact(Bind(node, target))


def _apply_action(work: ContextModel, before: ContextModel, action: ChangeAction) -> None:
    if isinstance(action, AddConnector):
        _require_new(work, action.con_id)
        work.assert_fact(IsConnector(action.con_id))
        work.assert_fact(ConnectorTypeFact(action.con_id, action.con_type.value))
    elif isinstance(action, RemoveConnector):
        if not work.is_connector(action.con_id):
            raise DanglingReference(f"no connector '{action.con_id}' to remove", action.con_id)
        _drop_element(work, action.con_id)
        work.retract_fact(IsConnector(action.con_id))
        work.retract_fact(ConnectorTypeFact(action.con_id, ""))
    elif isinstance(action, AddBinding):
        _require(work, action.source, action)
        _require(work, action.target, action)
        _add_bind(work, action.source, action.target)
    elif isinstance(action, RemoveBinding):
        if not work.has_binding(action.source, action.target):
            raise DanglingReference(
                f"no binding {action.source} -> {action.target} to remove",
                f"{action.source}->{action.target}",
            )
        work.retract_fact(Bind(action.source, action.target))
    elif isinstance(action, SetConnectorParam):
        if not work.is_connector(action.con_id):
            raise DanglingReference(f"no connector '{action.con_id}'", action.con_id)
    elif isinstance(action, AddComponent):
        _require_new(work, action.sc_id)
        work.assert_fact(IsComponent(action.sc_id))
        work.assert_fact(ComponentType(action.sc_id, action.sc_type))
    elif isinstance(action, RemoveComponent):
        if not work.is_component(action.sc_id):
            raise DanglingReference(f"no component '{action.sc_id}' to remove", action.sc_id)
        _drop_element(work, action.sc_id)
        work.retract_fact(IsComponent(action.sc_id))
        work.retract_fact(ComponentType(action.sc_id, ""))
    elif isinstance(action, ForEachInBinding):
        _require(work, action.node, action)
        _require(work, action.new_target, action)
        for source in _node_domain(before, action.node, "in"):
            work.retract_fact(Bind(source, action.node))
            _add_bind(work, source, action.new_target)
    elif isinstance(action, ForEachOutBinding):
        _require(work, action.node, action)
        _require(work, action.new_source, action)
        for target in _node_domain(before, action.node, "out"):
            if not action.keep:
                work.retract_fact(Bind(action.node, target))
            _add_bind(work, action.new_source, target)
    else:
        raise TypeError(f"unknown change action {action!r}")


def apply(batch: Sequence[ChangeAction], ctx: ContextModel) -> ContextModel:
    """
    Apply a batch of change actions atomically.

    Bulk rewrites range over the bindings the node had before the batch.

    Returns:
        A new context; ``ctx`` itself is never modified

    Raises:
        DanglingReference: If an action references a missing element
        DuplicateBinding: If an action would create an element or binding twice
    """
    work = ctx.copy()
    with work.batch():
        for action in batch:
            _apply_action(work, ctx, action)
    return work


# Effects -----------------------------------------------------------------------------


def predict_effect(tactic: ConcreteTactic, qos: StructuralQoS) -> StructuralQoS:
    """
    QoS of the adapted element after enacting ``tactic``.

    Formulas read the element's current attributes, the alternate service's
    attributes prefixed with ``alt_``, the tactic parameters and the link
    state. Attributes without a formula are unchanged; connector overheads
    other than those in the formulas are ignored.
    """
    alternate = tactic.alt_qos if tactic.alt_qos is not None else qos
    variables: Dict[str, Any] = dict(qos.to_dict())
    variables.update(alternate.prefixed("alt_"))
    variables.update({k: v for k, v in tactic.params.items() if isinstance(v, (int, float))})
    variables.update(tactic.context)

    updates = {}
    for effect in tactic.expected_effect:
        value = float(parse_expression(effect.expression).evaluate(variables))
        if effect.attribute in ("availability", "reliability"):
            value = min(1.0, max(0.0, value))
        updates[effect.attribute] = value
    return qos.with_values(**updates)
