"""Reading, writing and validating adaptive process model documents."""

import json
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple, Union

import networkx as nx
from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from models.spec import (
    AGGREGATE_FUNCTIONS,
    DATA_FIELDS,
    ROOT_LABEL,
    AdaptationPlan,
    AdaptiveProcessModel,
    Alternative,
    EmitTrigger,
    FlowNode,
    MeasurablePropertySpec,
    NodeKind,
    ProcessNode,
    PropertyKind,
    ScenarioAction,
    TacticInvocation,
)
from services.qos import DELEGATES
from services.tactics import TacticLibrary, default_library
from utils.errors import ExpressionError, ModelSyntaxError, ModelValidationError, NotFoundError
from utils.expressions import parse_expression
from utils.validators import (
    validate_distribution,
    validate_identifier,
    validate_non_negative,
    validate_probability,
    validate_thresholds,
)

# Path to bundled model documents
FIXTURES_DIR = Path(__file__).parent.parent / "fixtures"


def parse_model(text: str, library: Optional[TacticLibrary] = None) -> AdaptiveProcessModel:
    """
    Parse and validate a model document.

    Args:
        text: JSON text
        library: Tactic library used to check plan flows

    Returns:
        The validated model

    Raises:
        ModelSyntaxError: If the text is not well-formed JSON
        ModelValidationError: If the document violates a model rule
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelSyntaxError(e.msg, e.lineno, e.colno)
    if not isinstance(data, dict):
        raise ModelValidationError("model document must be a JSON object", "document")

    try:
        model = AdaptiveProcessModel.model_validate(data)
    except PydanticValidationError as e:
        problems = _Problems()
        for error in e.errors():
            problems.add(".".join(str(part) for part in error["loc"]) or "document", error["msg"])
        _raise_problems(problems)

    validate_model(model, library)
    return model


def load_model(path: Union[str, Path], library: Optional[TacticLibrary] = None) -> AdaptiveProcessModel:
    """Read and parse a model file."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    logger.debug(f"Parsing model {path}")
    return parse_model(text, library)


def load_bundled_model(name: str = "emergency_call") -> AdaptiveProcessModel:
    """Load a model shipped in the fixtures directory."""
    return load_model(FIXTURES_DIR / f"{name}.json")


def serialize_model(model: AdaptiveProcessModel) -> str:
    """Render a model as JSON that parses back to an equal model."""
    data = model.model_dump(mode="json", by_alias=True, exclude_defaults=True)
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def resolve_label(model: AdaptiveProcessModel, label: str) -> ProcessNode:
    """
    Find the node carrying ``label``; ``root`` names the workflow root.

    Raises:
        NotFoundError: If no node carries the label
    """
    labeled = model.labeled_nodes()
    if label not in labeled:
        raise NotFoundError(f"no process is labeled '{label}'", label)
    return labeled[label][1]


def argument_target(model: AdaptiveProcessModel, role: str, value: str) -> Optional[Tuple[str, str]]:
    """
    Work out what a tactic argument refers to.

    Args:
        model: The model the plan belongs to
        role: Argument role declared by the tactic template
        value: Argument text

    Returns:
        ``("service_node", path)``, ``("block", path)``, ``("provider", id)``,
        ``("service", name)`` or ``("value", value)``; None when unresolvable
    """
    if role in ("component", "node"):
        labeled = model.labeled_nodes()
        if value in labeled:
            path, node = labeled[value]
            if node.kind == NodeKind.SERVICE:
                return "service_node", path
            return ("block", path) if role == "node" else None
        paths = [p for p, n in model.workflow.walk() if n.kind == NodeKind.SERVICE and n.service == value]
        if len(paths) == 1:
            return "service_node", paths[0]
        return None
    if role == "service":
        if model.provider(value) is not None:
            return "provider", value
        if model.service(value) is not None:
            return "service", value
        return None
    return "value", value


class _Problems:
    def __init__(self):
        self.items: List[Tuple[str, str]] = []

    def add(self, element: str, message: str) -> None:
        self.items.append((element, message))


def _raise_problems(problems: _Problems) -> None:
    if problems.items:
        message = "; ".join(f"{element}: {text}" for element, text in problems.items)
        error = ModelValidationError(message, problems.items[0][0])
        error.problems = list(problems.items)
        raise error


def validate_model(model: AdaptiveProcessModel, library: Optional[TacticLibrary] = None) -> None:
    """
    Check every rule a parsed model must satisfy.

    Raises:
        ModelValidationError: Naming the first offending element; all
            problems found are listed in the message and in ``problems``
    """
    library = library or default_library()
    problems = _Problems()
    _check_workflow(model, problems)
    _check_catalog(model, problems)
    _check_requirements(model, problems)
    _check_plans(model, library, problems)
    _check_scenario(model, problems)

    _raise_problems(problems)


def _check_workflow(model: AdaptiveProcessModel, problems: _Problems) -> None:
    labels: Dict[str, str] = {}
    for path, node in model.workflow.walk():
        name = node.display_name(path)
        if node.label:
            if node.label in labels or (node.label == ROOT_LABEL and path != ROOT_LABEL):
                problems.add(node.label, f"label '{node.label}' is used more than once")
            labels[node.label] = path

        count = len(node.children)
        kind = node.kind.value
        if node.kind == NodeKind.SERVICE:
            if count:
                problems.add(name, "service node must not have children")
            if not node.service:
                problems.add(name, "service node must name a service")
            elif model.service(node.service) is None:
                problems.add(name, f"service '{node.service}' is not in the catalog")
        else:
            if node.service is not None:
                problems.add(name, f"{kind} node must not name a service")
            if node.kind in (NodeKind.LOOP, NodeKind.OPT) and count != 1:
                problems.add(name, f"{kind} node must have exactly 1 child, has {count}")
            elif count < 1:
                problems.add(name, f"{kind} node must have at least 1 child")

        if node.kind == NodeKind.LOOP:
            if node.k is None or node.k < 1:
                problems.add(name, "loop node needs a positive iteration count k")
        elif node.k is not None:
            problems.add(name, f"{kind} node must not set k")

        if node.kind == NodeKind.SEL:
            probabilities = node.probabilities or []
            if len(probabilities) != count:
                problems.add(name, f"sel node needs {count} probabilities, has {len(probabilities)}")
            else:
                valid, total = validate_distribution(probabilities)
                if not valid:
                    problems.add(name, f"sel probabilities must lie in [0, 1] and sum to 1, sum is {total}")
        elif node.kind == NodeKind.OPT:
            if node.probabilities is not None and (
                len(node.probabilities) != 1 or not validate_probability(node.probabilities[0])
            ):
                problems.add(name, "opt node takes a single probability in [0, 1]")
        elif node.probabilities is not None:
            problems.add(name, f"{kind} node must not set probabilities")


def _check_catalog(model: AdaptiveProcessModel, problems: _Problems) -> None:
    names: Set[str] = set()
    providers: Set[str] = set()
    for service in model.service_catalog:
        if service.name in names:
            problems.add(service.name, "service is declared more than once")
        names.add(service.name)
        if not service.providers:
            problems.add(service.name, "service has no provider")
        for profile in service.providers:
            pid = profile.provider_id
            if pid in providers:
                problems.add(pid, "provider id is used more than once")
            providers.add(pid)
            if not validate_non_negative(profile.latency_mean_ms):
                problems.add(pid, f"latency_mean_ms must not be negative, is {profile.latency_mean_ms}")
            if not validate_non_negative(profile.latency_stddev_ms):
                problems.add(pid, "latency_stddev_ms must not be negative")
            if not validate_probability(profile.failure_probability):
                problems.add(pid, f"failure_probability must lie in [0, 1], is {profile.failure_probability}")
            if not validate_non_negative(profile.cost):
                problems.add(pid, "cost must not be negative")
            if not validate_non_negative(profile.payload_bytes):
                problems.add(pid, "payload_bytes must not be negative")


def _check_property(spec: MeasurablePropertySpec, problems: _Problems) -> None:
    name = spec.name
    if spec.kind == PropertyKind.DATA and spec.data_field not in DATA_FIELDS:
        problems.add(name, f"data property needs field in {list(DATA_FIELDS)}")
    if spec.kind == PropertyKind.CONSTRAINT:
        try:
            parse_expression(spec.expression or "")
        except ExpressionError as e:
            problems.add(name, f"constraint expression: {e}")
    if spec.kind == PropertyKind.DERIVED:
        inputs = spec.dependency_names()
        if not inputs:
            problems.add(name, "derived property needs inputs")
        if (spec.formula is None) == (spec.function is None):
            problems.add(name, "derived property needs exactly one of formula or function")
        elif spec.function is not None and spec.function not in DELEGATES:
            problems.add(name, f"unknown delegate function '{spec.function}'")
        elif spec.formula is not None:
            try:
                unknown = parse_expression(spec.formula).names - set(inputs)
                if unknown:
                    problems.add(name, f"formula reads undeclared inputs {sorted(unknown)}")
                for input_name in inputs:
                    if not validate_identifier(input_name):
                        problems.add(name, f"input '{input_name}' is not usable in a formula")
            except ExpressionError as e:
                problems.add(name, f"formula: {e}")
    if spec.kind == PropertyKind.AGGREGATED:
        if spec.base is None:
            problems.add(name, "aggregated property needs a base property")
        if spec.function not in AGGREGATE_FUNCTIONS:
            problems.add(name, f"aggregate function must be one of {list(AGGREGATE_FUNCTIONS)}")
        if spec.window_ms is not None and spec.window_ms <= 0:
            problems.add(name, "window_ms must be positive")


def _check_requirements(model: AdaptiveProcessModel, problems: _Problems) -> None:
    labeled = model.labeled_nodes()
    graph = nx.DiGraph()
    declared: Dict[str, MeasurablePropertySpec] = {}

    def visit(spec: MeasurablePropertySpec) -> None:
        if spec.name in declared and declared[spec.name] != spec:
            problems.add(spec.name, "property name is declared more than once")
            return
        declared[spec.name] = spec
        graph.add_node(spec.name)
        _check_property(spec, problems)
        for dep in spec.dependencies():
            dep_name = dep if isinstance(dep, str) else dep.name
            graph.add_edge(spec.name, dep_name)
            if not isinstance(dep, str):
                visit(dep)

    requirement_names: Set[str] = set()
    for requirement in model.quality_requirements:
        name = requirement.name
        if name in requirement_names:
            problems.add(name, "two requirements measure the same property")
        requirement_names.add(name)
        if requirement.target_label not in labeled:
            problems.add(name, f"target label '{requirement.target_label}' does not exist")
        fuzzy = requirement.fuzzy
        if not validate_thresholds(fuzzy.x1, fuzzy.x2):
            problems.add(name, f"fuzzy bounds must be finite with x1 <= x2, got {fuzzy.x1}, {fuzzy.x2}")
        if fuzzy.window_ms is not None and fuzzy.window_ms <= 0:
            problems.add(name, "evaluation window must be positive")
        if not requirement.trigger:
            problems.add(name, "trigger name must not be empty")
        visit(requirement.measurable)

    for source, target in graph.edges:
        if target not in declared:
            problems.add(source, f"references undeclared property '{target}'")
    try:
        cycle = nx.find_cycle(graph)
        names = " -> ".join([edge[0] for edge in cycle] + [cycle[-1][1]])
        problems.add(cycle[0][0], f"property dependencies form a cycle: {names}")
    except nx.NetworkXNoCycle:
        pass


def _iter_flow(flow: List[FlowNode]):
    for node in flow:
        yield node
        if isinstance(node, Alternative):
            for variation in node.variations:
                yield from _iter_flow(variation)


def produced_triggers(model: AdaptiveProcessModel) -> Set[str]:
    """Trigger names some requirement, falsification or flow can raise."""
    produced = {r.trigger for r in model.quality_requirements}
    for plan in model.adaptation_plans:
        produced.update(f.trigger_name for f in plan.false_assumptions if f.severity == "hard")
        produced.update(n.name for n in _iter_flow(plan.flow) if isinstance(n, EmitTrigger))
    return produced


def _check_plans(model: AdaptiveProcessModel, library: TacticLibrary, problems: _Problems) -> None:
    produced = produced_triggers(model)
    for index, plan in enumerate(model.adaptation_plans, start=1):
        element = f"plan {index} ({plan.trigger})"
        if plan.trigger not in produced:
            problems.add(element, f"trigger '{plan.trigger}' is never raised")
        if not plan.flow:
            problems.add(element, "adaptation flow is empty")
        _check_flow(model, plan, plan.flow, library, element, problems)


def _check_flow(model, plan: AdaptationPlan, flow: List[FlowNode], library: TacticLibrary,
                element: str, problems: _Problems) -> None:
    for node in flow:
        if isinstance(node, TacticInvocation):
            template = library.find(node.tactic_kind)
            if template is None:
                problems.add(element, f"unknown tactic '{node.tactic_kind}'")
                continue
            low, high = template.arity
            count = len(node.arguments)
            if not low <= count <= high:
                expected = str(low) if low == high else f"{low}-{high}"
                problems.add(element, f"{node.tactic_kind} takes {expected} arguments, got {count}")
                continue
            for role, value in zip(template.roles, node.arguments):
                message = library.check_argument(template, role, value)
                if message is None and argument_target(model, role.role, value) is None:
                    message = f"{node.tactic_kind} argument '{value}' does not resolve to a {role.role}"
                if message:
                    problems.add(element, message)
        elif isinstance(node, Alternative):
            if len(node.variations) < 2:
                problems.add(element, "alternative needs at least 2 variations")
            for variation in node.variations:
                if not variation:
                    problems.add(element, "alternative variation is empty")
                _check_flow(model, plan, variation, library, element, problems)
        elif isinstance(node, EmitTrigger) and not node.name:
            problems.add(element, "emitted trigger name is empty")


def _check_scenario(model: AdaptiveProcessModel, problems: _Problems) -> None:
    scenario = model.scenario
    if scenario is None:
        return
    if scenario.horizon_ms <= 0:
        problems.add("scenario", "horizon_ms must be positive")
    previous = 0
    for index, event in enumerate(scenario.events):
        element = f"scenario event {index} ({event.action.value})"
        if event.at_ms < previous:
            problems.add(element, "events must be ordered by at_ms")
        previous = max(previous, event.at_ms)
        if not 0 <= event.at_ms <= scenario.horizon_ms:
            problems.add(element, f"at_ms must lie in [0, {scenario.horizon_ms}]")
        action = event.action
        if action in (ScenarioAction.SET_PROVIDER_LATENCY, ScenarioAction.SET_PROVIDER_FAILURE):
            if model.provider(event.provider or "") is None:
                problems.add(element, f"unknown provider '{event.provider}'")
        if action == ScenarioAction.SET_PROVIDER_LATENCY and (
            event.mean is None or not validate_non_negative(event.mean)
            or not validate_non_negative(event.stddev)
        ):
            problems.add(element, "latency needs a non-negative mean and stddev")
        if action == ScenarioAction.SET_PROVIDER_FAILURE and (
            event.p is None or not validate_probability(event.p)
        ):
            problems.add(element, "failure probability p must lie in [0, 1]")
        if action == ScenarioAction.SET_BANDWIDTH and not validate_non_negative(event.bytes_per_ms):
            problems.add(element, "bytes_per_ms must not be negative")
        if action in (ScenarioAction.ASSERT_ASSUMPTION, ScenarioAction.RETRACT_ASSUMPTION) and not event.name:
            problems.add(element, "assumption name is missing")
        if action == ScenarioAction.START_INSTANCES and (
            event.rate_per_s is None or not validate_non_negative(event.rate_per_s)
        ):
            problems.add(element, "rate_per_s must be a non-negative number")
