"""Plan and Execute stages of the adaptation loop.

On a trigger the planner walks the flow of every matching adaptation
pattern on a copy of the context model, predicts the effect of the
resulting tactics on each quality requirement and picks the best admissible
pattern. Nothing touches live state until the configuration manager enacts
the chosen batches.
"""

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from loguru import logger

from config.settings import settings
from models.context import Assumption
from models.qos import QualityLevel, Severity, StructuralQoS, TriggerEvent
from models.runtime import (
    AdaptationPattern,
    CompiledAlternative,
    CompiledEmit,
    CompiledNode,
    CompiledTactic,
    EvaluationUnit,
    RuntimeModel,
)
from models.spec import (
    FALSIFY_PREFIX,
    AdaptiveProcessModel,
    MeasurablePropertySpec,
    ProcessNode,
    PropertyKind,
    falsify_trigger,
)
from models.tactics import ChangeAction, ConcreteTactic
from services import tactics
from services.context_store import ContextModel
from services.qos import badness, classify, leaf_values_from_catalog, qos_of_provider, structural_qos
from services.tactics import TacticLibrary, default_library
from utils.errors import ArityError, ChainDepthExceeded, MissingLeafValue, NoViableOption, PreconditionFailed


class Outcome(str, enum.Enum):
    ENACTED = "enacted"
    REJECTED_BY_TRADEOFF = "rejected_by_tradeoff"
    NO_VIABLE_OPTION = "no_viable_option"
    FAILED = "failed"


@dataclass
class PlanExecution:
    """Result of walking one pattern's flow."""

    pattern_id: str
    trigger_event: TriggerEvent
    chosen_path: List[ConcreteTactic] = field(default_factory=list)
    emitted_falsifications: List[Tuple[str, str]] = field(default_factory=list)
    emitted_triggers: List[str] = field(default_factory=list)
    outcome: Optional[Outcome] = None
    score: float = 0.0
    admissible: bool = True
    reason: str = ""
    predictions: Dict[str, float] = field(default_factory=dict)
    ctx: Optional[ContextModel] = None
    ledger: Dict[str, StructuralQoS] = field(default_factory=dict)

    @property
    def batches(self) -> List[Tuple[ChangeAction, ...]]:
        return [tactic.batch for tactic in self.chosen_path]


class ChainGuard:
    """Stops falsification chains from cycling or growing without bound."""

    def __init__(self, max_depth: Optional[int] = None):
        self.max_depth = max_depth if max_depth is not None else settings.CHAIN_MAX_DEPTH
        self.active_chain: Tuple[Tuple[str, str], ...] = ()
        self.blocks = 0

    def allows(self, event: TriggerEvent, pattern_id: str) -> bool:
        """False if ``pattern_id`` already answered this trigger earlier in the chain."""
        if (event.trigger_name, pattern_id) in event.chain:
            self.blocks += 1
            logger.warning(
                f"Chain guard blocked {pattern_id} for '{event.trigger_name}' (chain length {len(event.chain)})"
            )
            return False
        return True

    def extend(self, event: TriggerEvent, pattern_id: str) -> Tuple[Tuple[str, str], ...]:
        """
        Chain carried by a trigger raised while answering ``event``.

        Raises:
            ChainDepthExceeded: If the chain would reach the maximum depth
        """
        chain = event.chain + ((event.trigger_name, pattern_id),)
        if len(chain) >= self.max_depth:
            raise ChainDepthExceeded(
                f"falsification chain reached depth {len(chain)} (max {self.max_depth})", pattern_id
            )
        self.active_chain = chain
        return chain


def node_at(root: ProcessNode, path: str) -> Optional[ProcessNode]:
    """Workflow node at a dotted path such as ``root.3.0``."""
    node = root
    for part in path.split(".")[1:]:
        index = int(part)
        if index >= len(node.children):
            return None
        node = node.children[index]
    return node


def _measured_attribute(spec: MeasurablePropertySpec,
                        declared: Mapping[str, Tuple[MeasurablePropertySpec, str]]) -> Optional[Tuple[str, str]]:
    """Structural attribute a property tracks and how to predict it: ``additive`` or ``probability``."""
    if spec.kind == PropertyKind.TIME:
        return "response_time", "additive"
    if spec.kind == PropertyKind.FAILURE:
        return "failure", "probability"
    if spec.kind == PropertyKind.DATA:
        field_name = spec.data_field
        if field_name == "latency_ms":
            return "response_time", "additive"
        if field_name in ("payload_bytes", "cost", "battery", "memory"):
            return field_name, "additive"
        return None
    if spec.kind == PropertyKind.AGGREGATED and spec.base is not None:
        base = spec.base
        if isinstance(base, str):
            base = declared.get(base, (None, None))[0]
        if base is None:
            return None
        if spec.function == "ratio" and base.kind == PropertyKind.FAILURE:
            return "availability", "probability"
        if spec.function in ("average", "min", "max"):
            mapped = _measured_attribute(base, declared)
            if mapped and mapped[1] == "additive":
                return mapped
    return None


def _attribute_value(qos: StructuralQoS, attribute: str) -> float:
    if attribute == "failure":
        return 1.0 - qos.availability
    return getattr(qos, attribute)


class AdaptationPlanner:
    """Selects, walks and scores adaptation patterns."""

    def __init__(self, runtime: RuntimeModel, model: AdaptiveProcessModel,
                 library: Optional[TacticLibrary] = None, guard: Optional[ChainGuard] = None,
                 tradeoff_lambda: Optional[float] = None):
        self.runtime = runtime
        self.model = model
        self.library = library or default_library()
        self.guard = guard or ChainGuard()
        self.tradeoff_lambda = settings.TRADEOFF_LAMBDA if tradeoff_lambda is None else tradeoff_lambda
        self.leaf_values = leaf_values_from_catalog(model)
        self.ledger: Dict[str, StructuralQoS] = {}
        self._declared = model.declared_properties()
        self._labeled = model.labeled_nodes()

    # Selection -----------------------------------------------------------------

    def candidates(self, event: TriggerEvent, ctx: ContextModel) -> List[AdaptationPattern]:
        found = []
        for pattern in sorted(self.runtime.adaptation_patterns, key=lambda p: p.order):
            if pattern.trigger != event.trigger_name:
                continue
            if not all(ctx.assumption(name) for name in pattern.pre_assumptions):
                logger.debug(f"{pattern.id} skipped: pre-assumptions do not hold")
                continue
            if not self.guard.allows(event, pattern.id):
                continue
            found.append(pattern)
        return found

    def select_pattern(self, event: TriggerEvent, ctx: ContextModel) -> Optional[PlanExecution]:
        """
        Pick the pattern to enact for a trigger.

        Every candidate is walked and scored; the admissible one with the
        highest score wins, ties going to declaration order.

        Returns:
            The winning execution with outcome ``enacted``; otherwise the
            first candidate's execution explaining the rejection; None when
            no pattern answers the trigger
        """
        executions = []
        for pattern in self.candidates(event, ctx):
            execution = self.walk_flow(pattern, ctx, event)
            if execution.outcome is None:
                self.score_tradeoff(execution, event)
            executions.append(execution)
        if not executions:
            return None

        best: Optional[PlanExecution] = None
        for execution in executions:
            if execution.outcome is not None or not execution.admissible:
                continue
            if best is None or execution.score > best.score:
                best = execution
        if best is not None:
            best.outcome = Outcome.ENACTED
            return best

        for execution in executions:
            if execution.outcome is None:
                execution.outcome = Outcome.REJECTED_BY_TRADEOFF
                execution.reason = "predicted to make an acceptable requirement unacceptable"
        return executions[0]

    # Flow walking --------------------------------------------------------------

    def walk_flow(self, pattern: AdaptationPattern, ctx: ContextModel,
                  event: Optional[TriggerEvent] = None) -> PlanExecution:
        """
        Walk a pattern's flow on a copy of ``ctx``.

        Tactics are instantiated and applied in order; at an alternative the
        first variation whose tactics all instantiate is taken. The live
        context is never modified.
        """
        event = event or TriggerEvent(pattern.trigger, Severity.HARD, None, 0)
        execution = PlanExecution(pattern.id, event, ctx=ctx.copy(), ledger=dict(self.ledger))
        try:
            self._walk(pattern.flow, execution)
        except (PreconditionFailed, ArityError, NoViableOption) as e:
            execution.outcome = Outcome.NO_VIABLE_OPTION
            execution.reason = e.message
            execution.chosen_path = []
            execution.ctx = None
            logger.info(f"{pattern.id} has no viable option: {e.message}")
        return execution

    def _walk(self, flow: Sequence[CompiledNode], execution: PlanExecution) -> None:
        for node in flow:
            if isinstance(node, CompiledTactic):
                tactic = tactics.instantiate(
                    node.kind, node.arguments, execution.ctx, self.library,
                    params=dict(node.params), pre_assumptions=node.pre_assumptions,
                    alt_qos_of=self._qos_of_component,
                )
                execution.ctx = tactics.apply(tactic.batch, execution.ctx)
                self._predict(tactic, execution.ledger)
                execution.chosen_path.append(tactic)
            elif isinstance(node, CompiledAlternative):
                self._walk_alternative(node, execution)
            elif isinstance(node, CompiledEmit):
                execution.emitted_triggers.append(node.name)

    def _walk_alternative(self, node: CompiledAlternative, execution: PlanExecution) -> None:
        failures = []
        for variation in node.variations:
            snapshot = (execution.ctx, dict(execution.ledger), list(execution.chosen_path),
                        list(execution.emitted_triggers))
            try:
                self._walk(variation, execution)
                return
            except (PreconditionFailed, ArityError) as e:
                failures.append(e.message)
                execution.ctx, execution.ledger, execution.chosen_path, execution.emitted_triggers = snapshot
        raise NoViableOption("no variation applies: " + "; ".join(failures))

    # Prediction ----------------------------------------------------------------

    def _qos_of_component(self, sc_id: str) -> Optional[StructuralQoS]:
        component = self.runtime.components.get(sc_id)
        return qos_of_provider(component.provider) if component else None

    def _predict(self, tactic: ConcreteTactic, ledger: Dict[str, StructuralQoS]) -> None:
        path = self.runtime.node_paths.get(tactic.anchor)
        node = node_at(self.model.workflow, path) if path else None
        if node is None:
            return
        try:
            current = structural_qos(node, self.leaf_values, ledger, path)
        except MissingLeafValue:
            return
        ledger[path] = tactics.predict_effect(tactic, current)

    def _predict_requirement(self, unit: EvaluationUnit, ledger: Mapping[str, StructuralQoS]) -> Optional[float]:
        if unit.last_value is None:
            return None
        spec = self._declared[unit.requirement_name][0]
        mapped = _measured_attribute(spec, self._declared)
        if mapped is None:
            return unit.last_value
        attribute, mode = mapped
        path, node = self._labeled[unit.target_label]
        try:
            before = structural_qos(node, self.leaf_values, self.ledger, path)
            after = structural_qos(node, self.leaf_values, ledger, path)
        except MissingLeafValue:
            return unit.last_value
        if mode == "probability":
            return _attribute_value(after, attribute)
        delta = _attribute_value(after, attribute) - _attribute_value(before, attribute)
        return max(0.0, unit.last_value + delta)

    def score_tradeoff(self, execution: PlanExecution, event: TriggerEvent) -> Tuple[float, bool]:
        """
        Score the predicted effect of an execution.

        The score is the drop in badness of the triggering requirement minus
        lambda times the summed rise in badness of every other requirement.
        An execution is inadmissible if it would push a currently acceptable
        requirement into the unacceptable band.
        """
        improvement = 0.0
        worsening = 0.0
        admissible = True
        for unit in self.runtime.evaluation_units.values():
            predicted = self._predict_requirement(unit, execution.ledger)
            if predicted is None:
                continue
            execution.predictions[unit.requirement_name] = predicted
            now = badness(unit.fuzzy, unit.last_value)
            after = badness(unit.fuzzy, predicted)
            if unit.requirement_name == event.source_qr:
                improvement = now - after
            else:
                worsening += max(0.0, after - now)
            if (classify(unit.fuzzy, unit.last_value) == QualityLevel.ACCEPTABLE
                    and classify(unit.fuzzy, predicted) == QualityLevel.UNACCEPTABLE):
                admissible = False
        execution.score = improvement - self.tradeoff_lambda * worsening
        execution.admissible = admissible
        return execution.score, admissible

    # After enactment ------------------------------------------------------------------

    def commit(self, execution: PlanExecution) -> None:
        """Keep the predictions of an enacted execution and follow substituted services."""
        self.ledger = dict(execution.ledger)
        for tactic in execution.chosen_path:
            template = self.library.get(tactic.kind)
            if template.substitutes_anchor and template.alternate_role:
                substitute = tactic.bindings[template.alternate_role]
                if tactic.anchor in self.runtime.node_paths:
                    self.runtime.node_paths[substitute] = self.runtime.node_paths[tactic.anchor]

    def handle_falsification(self, severity: str, assumption: str, execution: PlanExecution,
                             ctx: ContextModel, sim_time_ms: int) -> List[TriggerEvent]:
        """
        Consequences of a falsification raised by an enacted pattern.

        A hard falsification retracts the assumption in the context and
        queues the trigger named after it. A soft one changes nothing here;
        its cost was weighed when the pattern was scored.

        Raises:
            ChainDepthExceeded: If the chain grows too long
        """
        if severity != "hard":
            return []
        ctx.assert_fact(Assumption(assumption, False))
        chain = self.guard.extend(execution.trigger_event, execution.pattern_id)
        return [TriggerEvent(falsify_trigger(assumption), Severity.HARD, None, sim_time_ms, chain)]

    def falsifications(self, execution: PlanExecution) -> List[Tuple[str, str]]:
        """
        ``(severity, assumption)`` pairs an enacted execution falsifies.

        The pattern's declared falsifications come first, then a hard one
        for every ``Falsify: X`` emitted on the chosen path.
        """
        pattern = next(p for p in self.runtime.adaptation_patterns if p.id == execution.pattern_id)
        found = list(pattern.false_assumptions)
        for name in execution.emitted_triggers:
            if name.startswith(FALSIFY_PREFIX):
                found.append(("hard", name[len(FALSIFY_PREFIX):]))
        execution.emitted_falsifications = found
        return found

    def emitted_events(self, execution: PlanExecution, sim_time_ms: int) -> List[TriggerEvent]:
        """
        Plain triggers raised by emit nodes, as soft events.

        Raises:
            ChainDepthExceeded: If the chain grows too long
        """
        events = []
        for name in execution.emitted_triggers:
            if name.startswith(FALSIFY_PREFIX):
                continue
            chain = self.guard.extend(execution.trigger_event, execution.pattern_id)
            events.append(TriggerEvent(name, Severity.SOFT, None, sim_time_ms, chain))
        return events
