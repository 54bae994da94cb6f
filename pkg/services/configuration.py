"""Configuration manager: enacts change-action batches on the live system.

A batch is first applied to copies of the context model and of the routing
table. Only when every batch of an adaptation succeeds on the copies are
the runtime model, the context model and the simulator switched over, so
the three never disagree.
"""

from typing import Dict, List, Mapping, Optional, Sequence

from loguru import logger

from models.runtime import ConnectorModel, InterceptorSpec, RoutingTable, RuntimeModel, ServiceComponent
from models.spec import ProviderProfile
from models.tactics import (
    AddBinding,
    AddComponent,
    AddConnector,
    ChangeAction,
    ForEachInBinding,
    ForEachOutBinding,
    RemoveBinding,
    RemoveComponent,
    RemoveConnector,
    SetConnectorParam,
    action_to_dict,
)
from services import tactics
from services.context_store import ContextModel
from utils.errors import BindingTypeError, DanglingReference, DuplicateBinding, NotFoundError


def _require(table: RoutingTable, node: str, action: ChangeAction) -> None:
    if not table.has_node(node):
        raise DanglingReference(f"{type(action).__name__} references unknown element '{node}'", node)


def _append(table: RoutingTable, source: str, target: str) -> None:
    if table.is_component(source) and table.is_component(target):
        raise BindingTypeError(f"cannot bind component {source} directly to component {target}", source)
    targets = table.outs.setdefault(source, [])
    if target in targets:
        raise DuplicateBinding(f"binding {source} -> {target} already exists", f"{source}->{target}")
    targets.append(target)


def _detach(table: RoutingTable, node: str) -> None:
    table.outs.pop(node, None)
    for targets in table.outs.values():
        while node in targets:
            targets.remove(node)


def apply_to_table(table: RoutingTable, batch: Sequence[ChangeAction],
                   providers: Mapping[str, ProviderProfile] = None) -> RoutingTable:
    """
    Apply a batch to a routing table.

    Out-bindings are ordered: redirected in-bindings keep their position in
    the source's list, moved out-bindings are appended in their original
    order. Bulk rewrites range over the bindings as they stood before the
    batch.

    Returns:
        A new table; ``table`` is left unchanged

    Raises:
        DanglingReference, DuplicateBinding, BindingTypeError
    """
    before = table
    work = table.copy()
    for action in batch:
        if isinstance(action, AddConnector):
            if work.has_node(action.con_id):
                raise DuplicateBinding(f"element '{action.con_id}' already exists", action.con_id)
            work.connectors[action.con_id] = ConnectorModel(action.con_id, action.con_type, dict(action.params))
        elif isinstance(action, RemoveConnector):
            if action.con_id not in work.connectors:
                raise DanglingReference(f"no connector '{action.con_id}' to remove", action.con_id)
            _detach(work, action.con_id)
            del work.connectors[action.con_id]
        elif isinstance(action, AddBinding):
            _require(work, action.source, action)
            _require(work, action.target, action)
            _append(work, action.source, action.target)
        elif isinstance(action, RemoveBinding):
            targets = work.outs.get(action.source, [])
            if action.target not in targets:
                raise DanglingReference(
                    f"no binding {action.source} -> {action.target} to remove",
                    f"{action.source}->{action.target}",
                )
            targets.remove(action.target)
        elif isinstance(action, SetConnectorParam):
            if action.con_id not in work.connectors:
                raise DanglingReference(f"no connector '{action.con_id}'", action.con_id)
            work.connectors[action.con_id].params[action.key] = action.value
        elif isinstance(action, AddComponent):
            if work.has_node(action.sc_id):
                raise DuplicateBinding(f"element '{action.sc_id}' already exists", action.sc_id)
            profile = (providers or {}).get(action.provider_id)
            if profile is None:
                raise DanglingReference(f"unknown provider '{action.provider_id}'", action.provider_id)
            work.components[action.sc_id] = ServiceComponent(action.sc_id, action.sc_type, profile)
        elif isinstance(action, RemoveComponent):
            if action.sc_id not in work.components:
                raise DanglingReference(f"no component '{action.sc_id}' to remove", action.sc_id)
            _detach(work, action.sc_id)
            del work.components[action.sc_id]
        elif isinstance(action, ForEachInBinding):
            _require(work, action.node, action)
            _require(work, action.new_target, action)
            for source in before.in_bindings(action.node) if before.has_node(action.node) else []:
                targets = work.outs.get(source, [])
                if action.node not in targets:
                    continue
                if action.new_target in targets:
                    raise DuplicateBinding(
                        f"binding {source} -> {action.new_target} already exists",
                        f"{source}->{action.new_target}",
                    )
                if work.is_component(source) and work.is_component(action.new_target):
                    raise BindingTypeError(
                        f"cannot bind component {source} directly to component {action.new_target}", source
                    )
                targets[targets.index(action.node)] = action.new_target
        elif isinstance(action, ForEachOutBinding):
            _require(work, action.node, action)
            _require(work, action.new_source, action)
            for target in before.out_bindings(action.node):
                if not action.keep and target in work.outs.get(action.node, []):
                    work.outs[action.node].remove(target)
                _append(work, action.new_source, target)
        else:
            raise TypeError(f"unknown change action {action!r}")
    return work


class ConfigurationManager:
    """Keeps the runtime model, the context model and the simulator in step."""

    def __init__(self, runtime: RuntimeModel, ctx: ContextModel, sim=None,
                 providers: Optional[Mapping[str, ProviderProfile]] = None):
        self.runtime = runtime
        self.ctx = ctx
        self.sim = sim
        self.providers: Dict[str, ProviderProfile] = dict(providers or {})
        self.enactments = 0

    def enact(self, batches: Sequence[Sequence[ChangeAction]]) -> List[dict]:
        """
        Enact batches in order, all or nothing.

        Each batch is applied to the result of the previous one. If any
        batch fails, nothing is changed and the error propagates.

        Returns:
            The enacted actions as dictionaries, for the trace
        """
        ctx = self.ctx
        table = self.runtime.table
        for batch in batches:
            ctx = tactics.apply(batch, ctx)
            table = apply_to_table(table, batch, self.providers)

        self.runtime.table = table
        self.ctx = ctx
        if self.sim is not None:
            self.sim.configure(table)
        self.enactments += 1
        enacted = [action_to_dict(a) for batch in batches for a in batch]
        logger.info(f"Enacted {len(enacted)} change actions")
        return enacted

    def install_interceptor(self, spec: InterceptorSpec) -> None:
        """
        Place an interceptor on a connector of the runtime model and the simulator.

        Raises:
            NotFoundError: If the connector does not exist
        """
        connector = self.runtime.connectors.get(spec.connector_id)
        if connector is None:
            raise NotFoundError(f"no connector '{spec.connector_id}'", spec.connector_id)
        if self.sim is not None:
            self.sim.install_interceptor(spec)
        connector.installed_interceptors.append(spec)

    def uninstall_interceptor(self, interceptor_id: str) -> InterceptorSpec:
        for connector in self.runtime.connectors.values():
            for spec in connector.installed_interceptors:
                if spec.id == interceptor_id:
                    if self.sim is not None:
                        self.sim.uninstall_interceptor(interceptor_id)
                    connector.installed_interceptors.remove(spec)
                    return spec
        raise NotFoundError(f"no interceptor '{interceptor_id}'", interceptor_id)
