"""Transformation of an adaptive process model into its runtime model.

Every workflow construct becomes a small pattern of service components and
connectors. Identifiers are derived from workflow paths so that the same
model always yields the same runtime model.
"""

from typing import Any, Dict, List, Optional, Tuple

import networkx as nx
from loguru import logger

from config.settings import settings
from models.runtime import (
    AdaptationPattern,
    Checkpoint,
    CompiledAlternative,
    CompiledEmit,
    CompiledNode,
    CompiledTactic,
    ConnectorModel,
    ConnectorType,
    EvaluationUnit,
    InterceptorKind,
    InterceptorSpec,
    ProcessBlock,
    RoutingTable,
    RuntimeModel,
    ServiceComponent,
    supported_interceptor_kinds,
)
from models.spec import (
    ROOT_LABEL,
    AdaptiveProcessModel,
    Alternative,
    EmitTrigger,
    FlowNode,
    MeasurablePropertySpec,
    NodeKind,
    ProcessNode,
    PropertyKind,
    TacticInvocation,
)
from services.model_io import argument_target
from services.tactics import TacticLibrary, default_library
from utils.errors import InterceptorPlacementError, TransformError
from utils.expressions import parse_expression

STANDBY_PREFIX = "standby"

# Interceptors per property kind: (position, event kinds)
INTERCEPTOR_LAYOUT: Dict[PropertyKind, Tuple[Tuple[str, Tuple[InterceptorKind, ...]], ...]] = {
    PropertyKind.TIME: (
        ("before", (InterceptorKind.BLOCK_ENTRY,)),
        ("after", (InterceptorKind.BLOCK_EXIT,)),
    ),
    PropertyKind.FAILURE: (
        ("before", (InterceptorKind.BLOCK_ENTRY,)),
        ("after", (InterceptorKind.BLOCK_EXIT, InterceptorKind.FAILURE)),
    ),
    PropertyKind.COUNT: (("after", (InterceptorKind.COUNT,)),),
    PropertyKind.DATA: (("after", (InterceptorKind.DATA_VALUE,)),),
    PropertyKind.CONSTRAINT: (("after", (InterceptorKind.CONSTRAINT_CHECK,)),),
    PropertyKind.DERIVED: (),
    PropertyKind.AGGREGATED: (),
}


def component_id(path: str, service: str) -> str:
    return f"{path}.SC:{service}"


def standby_id(service: str, provider: str) -> str:
    return f"{STANDBY_PREFIX}.SC:{service}#{provider}"


def block_id(path: str, label: str) -> str:
    return f"{path}.PB:{label}"


class _Builder:
    """Accumulates the runtime graph while walking the workflow tree."""

    def __init__(self, model: AdaptiveProcessModel):
        self.model = model
        self.table = RoutingTable()
        self.blocks: Dict[str, ProcessBlock] = {}
        self.node_paths: Dict[str, str] = {}
        self.labels: Dict[str, str] = {}
        self.components_by_path: Dict[str, str] = {}
        self.opt_default = settings.OPT_DEFAULT_PROBABILITY

    def connector(self, con_id: str, con_type: ConnectorType, **params: Any) -> str:
        self.table.connectors[con_id] = ConnectorModel(con_id, con_type, dict(params))
        return con_id

    def bind(self, source: str, target: str) -> None:
        if self.table.is_component(source) and self.table.is_component(target):
            raise TransformError(f"would bind component {source} to component {target}", source)
        self.table.outs.setdefault(source, []).append(target)

    def build(self, node: ProcessNode, path: str) -> Tuple[str, str]:
        """Realize a subtree; returns its entry and exit node ids."""
        if node.label or path == ROOT_LABEL:
            return self.block(node, path, node.label or ROOT_LABEL)
        return self.construct(node, path)

    def block(self, node: ProcessNode, path: str, label: str) -> Tuple[str, str]:
        start = self.connector(f"{path}.BlockStart", ConnectorType.BLOCK_START)
        end = self.connector(f"{path}.BlockEnd", ConnectorType.BLOCK_END)
        entry, exit_ = self.construct(node, path)
        self.bind(start, entry)
        self.bind(exit_, end)
        pb_id = block_id(path, label)
        members = [self.components_by_path[p] for p, _ in node.walk(path) if p in self.components_by_path]
        self.blocks[pb_id] = ProcessBlock(pb_id, label, path, start, end, members)
        self.labels[label] = pb_id
        self.node_paths[start] = path
        self.node_paths[end] = path
        return start, end

    def construct(self, node: ProcessNode, path: str) -> Tuple[str, str]:
        kind = node.kind
        if kind == NodeKind.SERVICE:
            service = self.model.service(node.service)
            sc_id = component_id(path, node.service)
            self.table.components[sc_id] = ServiceComponent(sc_id, node.service, service.providers[0])
            self.components_by_path[path] = sc_id
            self.node_paths[sc_id] = path
            return sc_id, sc_id

        parts = [self.build(child, f"{path}.{i}") for i, child in enumerate(node.children)]

        if kind == NodeKind.SEQ:
            for i in range(len(parts) - 1):
                seq_in = self.connector(f"{path}.SeqIn.{i}", ConnectorType.SEQ_IN)
                seq_out = self.connector(f"{path}.SeqOut.{i}", ConnectorType.SEQ_OUT)
                self.bind(parts[i][1], seq_in)
                self.bind(seq_in, seq_out)
                self.bind(seq_out, parts[i + 1][0])
            return parts[0][0], parts[-1][1]

        if kind in (NodeKind.SEL, NodeKind.OPT):
            if kind == NodeKind.SEL:
                probabilities = list(node.probabilities)
            else:
                p = node.opt_probability(self.opt_default)
                probabilities = [p, 1.0 - p]
            sel_out = self.connector(f"{path}.SelOut", ConnectorType.SEL_OUT, probabilities=probabilities)
            sel_in = self.connector(f"{path}.SelIn", ConnectorType.SEL_IN, partner=sel_out)
            self.table.connectors[sel_out].params["partner"] = sel_in
            for entry, exit_ in parts:
                self.bind(sel_out, entry)
                self.bind(exit_, sel_in)
            if kind == NodeKind.OPT:
                self.bind(sel_out, sel_in)
            return sel_out, sel_in

        if kind == NodeKind.AND_PAR:
            par_out = self.connector(f"{path}.ParOut", ConnectorType.PAR_OUT, partner=f"{path}.ParIn")
            par_in = self.connector(f"{path}.ParIn", ConnectorType.PAR_IN, partner=par_out)
            for entry, exit_ in parts:
                self.bind(par_out, entry)
                self.bind(exit_, par_in)
            return par_out, par_in

        # loop: the back-edge is the first out-binding of LoopIn, the exit the second
        loop_out = self.connector(f"{path}.LoopOut", ConnectorType.LOOP_OUT, partner=f"{path}.LoopIn")
        loop_in = self.connector(f"{path}.LoopIn", ConnectorType.LOOP_IN, k=node.k, partner=loop_out)
        entry, exit_ = parts[0]
        self.bind(loop_out, entry)
        self.bind(exit_, loop_in)
        self.bind(loop_in, loop_out)
        return loop_out, loop_in

    def standby(self) -> Dict[str, List[str]]:
        """Isolated components for every provider the workflow does not bind."""
        bound = {c.provider.provider_id for c in self.table.components.values()}
        by_service: Dict[str, List[str]] = {}
        for service in self.model.service_catalog:
            for profile in service.providers:
                if profile.provider_id in bound:
                    continue
                sc_id = standby_id(service.name, profile.provider_id)
                self.table.components[sc_id] = ServiceComponent(sc_id, service.name, profile)
                by_service.setdefault(service.name, []).append(sc_id)
        return by_service


def _checkpoints(model: AdaptiveProcessModel, builder: _Builder) -> Dict[str, Checkpoint]:
    checkpoints: Dict[str, Checkpoint] = {}
    for name, (spec, target) in model.declared_properties().items():
        block = builder.blocks[builder.labels[target]]
        checkpoint = Checkpoint(
            id=f"CP:{name}",
            property_name=name,
            kind=spec.kind,
            spec=spec,
            block_id=block.id,
            inputs=spec.dependency_names(),
            window_ms=spec.window_ms,
            expression=_expression_of(spec),
        )
        for position, kinds in INTERCEPTOR_LAYOUT[spec.kind]:
            con_id = block.start_connector if position == "before" else block.end_connector
            connector = builder.table.connectors[con_id]
            unsupported = set(kinds) - supported_interceptor_kinds(connector.con_type)
            if unsupported:
                raise InterceptorPlacementError(
                    f"{connector.con_type.value} cannot host {sorted(k.value for k in unsupported)}", con_id
                )
            interceptor = InterceptorSpec(f"{checkpoint.id}.{position}", con_id, checkpoint.id, kinds)
            connector.installed_interceptors.append(interceptor)
            checkpoint.source_interceptors.append(interceptor.id)
        checkpoints[checkpoint.id] = checkpoint
    return checkpoints


def _expression_of(spec: MeasurablePropertySpec):
    if spec.kind == PropertyKind.CONSTRAINT:
        return parse_expression(spec.expression)
    if spec.kind == PropertyKind.DERIVED and spec.formula:
        return parse_expression(spec.formula)
    return None


class _PlanCompiler:
    def __init__(self, model: AdaptiveProcessModel, builder: _Builder,
                 standby: Dict[str, List[str]], library: TacticLibrary):
        self.model = model
        self.builder = builder
        self.standby = standby
        self.library = library

    def argument(self, kind: str, role: str, value: str) -> str:
        target = argument_target(self.model, role, value)
        resolved: Optional[str] = None
        if target is not None:
            what, ref = target
            if what == "service_node":
                resolved = self.builder.components_by_path.get(ref)
            elif what == "block":
                resolved = f"{ref}.BlockStart"
            elif what == "provider":
                service, _ = self.model.provider(ref)
                resolved = standby_id(service.name, ref)
                if not self.builder.table.is_component(resolved):
                    resolved = None
            elif what == "service":
                candidates = self.standby.get(ref)
                resolved = candidates[0] if candidates else None
            else:
                resolved = ref
        if resolved is None:
            raise TransformError(f"{kind} argument '{value}' cannot be bound to a runtime {role}", value)
        return resolved

    def flow(self, nodes: List[FlowNode]) -> Tuple[CompiledNode, ...]:
        compiled: List[CompiledNode] = []
        for node in nodes:
            if isinstance(node, TacticInvocation):
                template = self.library.get(node.tactic_kind)
                arguments = tuple(
                    self.argument(node.tactic_kind, role.role, value)
                    for role, value in zip(template.roles, node.arguments)
                )
                compiled.append(CompiledTactic(
                    node.tactic_kind, arguments, tuple(sorted(node.params.items())), tuple(node.pre_assumptions),
                ))
            elif isinstance(node, Alternative):
                compiled.append(CompiledAlternative(tuple(self.flow(v) for v in node.variations)))
            elif isinstance(node, EmitTrigger):
                compiled.append(CompiledEmit(node.name))
        return tuple(compiled)


def transform(model: AdaptiveProcessModel, library: Optional[TacticLibrary] = None) -> RuntimeModel:
    """
    Build the runtime model of a validated adaptive process model.

    Args:
        model: Validated model
        library: Tactic library used to interpret plan arguments

    Returns:
        RuntimeModel with components, connectors, bindings, process blocks,
        checkpoints, evaluation units and adaptation patterns

    Raises:
        TransformError: If a tactic argument cannot be bound to a runtime id
    """
    library = library or default_library()
    builder = _Builder(model)
    builder.build(model.workflow, ROOT_LABEL)
    standby = builder.standby()

    units = {}
    for requirement in model.quality_requirements:
        unit = EvaluationUnit(
            id=f"EU:{requirement.name}",
            requirement_name=requirement.name,
            fuzzy=requirement.fuzzy,
            trigger=requirement.trigger,
            target_label=requirement.target_label,
        )
        units[unit.id] = unit

    compiler = _PlanCompiler(model, builder, standby, library)
    patterns = []
    for order, plan in enumerate(model.adaptation_plans):
        patterns.append(AdaptationPattern(
            id=f"AP{order + 1}",
            trigger=plan.trigger,
            flow=compiler.flow(plan.flow),
            pre_assumptions=tuple(plan.pre_assumptions),
            false_assumptions=tuple((f.severity, f.assumption) for f in plan.false_assumptions),
            order=order,
        ))

    runtime = RuntimeModel(
        table=builder.table,
        process_blocks=builder.blocks,
        checkpoints=_checkpoints(model, builder),
        evaluation_units=units,
        adaptation_patterns=patterns,
        node_paths=builder.node_paths,
        labels=builder.labels,
        root_block=builder.labels[ROOT_LABEL],
    )
    logger.info(
        f"Transformed model: {len(runtime.components)} components, "
        f"{len(runtime.connectors)} connectors, {len(runtime.bindings)} bindings"
    )
    return runtime


# Causal connection -----------------------------------------------------------------


def routing_graph(table: RoutingTable) -> nx.DiGraph:
    graph = nx.DiGraph()
    for sc_id, component in table.components.items():
        graph.add_node(sc_id, kind="component", provider=component.provider.provider_id)
    for con_id, connector in table.connectors.items():
        graph.add_node(
            con_id, kind=connector.con_type.value,
            interceptors=tuple(sorted(i.id for i in connector.installed_interceptors)),
        )
    graph.add_edges_from(table.edges())
    return graph


def verify_causal_connection(runtime: RuntimeModel, sim) -> List[str]:
    """
    Differences between the runtime model and the simulator routing table.

    Args:
        runtime: Runtime model
        sim: Simulator state whose ``table`` routes messages

    Returns:
        Mismatch descriptions; empty when the two are causally connected
    """
    model_graph = routing_graph(runtime.table)
    sim_graph = routing_graph(sim.table)
    mismatches: List[str] = []

    for node in sorted(set(model_graph) - set(sim_graph)):
        mismatches.append(f"node {node} is missing from the simulator")
    for node in sorted(set(sim_graph) - set(model_graph)):
        mismatches.append(f"node {node} is not in the runtime model")
    for node in sorted(set(model_graph) & set(sim_graph)):
        if model_graph.nodes[node] != sim_graph.nodes[node]:
            mismatches.append(f"node {node} differs: {model_graph.nodes[node]} != {sim_graph.nodes[node]}")

    for source, target in sorted(set(model_graph.edges) - set(sim_graph.edges)):
        mismatches.append(f"binding {source} -> {target} is missing from the simulator")
    for source, target in sorted(set(sim_graph.edges) - set(model_graph.edges)):
        mismatches.append(f"binding {source} -> {target} is not in the runtime model")

    for node, targets in sorted(runtime.table.outs.items()):
        routed = sim.table.outs.get(node, [])
        if sorted(targets) == sorted(routed) and list(targets) != list(routed):
            mismatches.append(f"out-bindings of {node} are ordered differently: {targets} != {routed}")

    if mismatches:
        logger.warning(f"Causal connection broken: {len(mismatches)} mismatches")
    return mismatches
