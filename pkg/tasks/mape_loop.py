"""Periodic MAPE-K loop interleaved with the process simulator."""

from collections import Counter
from typing import Dict, List, Optional, Tuple

from loguru import logger

from config.settings import settings
from models.context import BATTERY_USED, LINK_BANDWIDTH, MEMORY_USED, Assumption, PropertyValue, QualityOf
from models.qos import Measurement, TriggerEvent
from models.runtime import RuntimeModel
from models.spec import AdaptiveProcessModel, ScenarioScript
from models.trace import RunReport, TraceKind
from services.configuration import ConfigurationManager
from services.context_store import ContextModel, context_from_runtime
from services.planner import AdaptationPlanner, Outcome, PlanExecution
from services.qos import MeasurementHub, band_shares, evaluate
from services.simulator import SimulatorState, init_sim
from services.tactics import TacticLibrary, default_library
from services.transform import transform, verify_causal_connection
from utils.errors import ChainDepthExceeded, EngineError
from utils.tracing import TraceLog

RESOURCE_LEVELS = ("high", "medium", "low")


def resource_level(used: float, budget: float) -> str:
    """Band of the remaining share of a client-device budget."""
    if budget <= 0:
        return "low"
    remaining = max(0.0, 1.0 - used / budget)
    if remaining >= settings.RESOURCE_HIGH_FRACTION:
        return "high"
    if remaining >= settings.RESOURCE_MEDIUM_FRACTION:
        return "medium"
    return "low"


class AdaptationEngine:
    """
    Monitor, Analyze, Plan and Execute over one runtime model.

    The engine is the only writer of the context model. The simulator
    hands it interceptor events and environment observations; the
    configuration manager applies the adaptations it decides on.
    """

    def __init__(self, model: AdaptiveProcessModel, runtime: RuntimeModel, sim: SimulatorState,
                 trace: TraceLog, library: Optional[TacticLibrary] = None,
                 adaptation: bool = True, verify: Optional[bool] = None):
        self.model = model
        self.runtime = runtime
        self.sim = sim
        self.trace = trace
        self.adaptation = adaptation
        self.verify = settings.VERIFY_EACH_TICK if verify is None else verify

        providers = {p.provider_id: p for s in model.service_catalog for p in s.providers}
        self.manager = ConfigurationManager(runtime, context_from_runtime(runtime), sim, providers)
        self.planner = AdaptationPlanner(runtime, model, library or default_library())
        owners = {spec.id: spec.checkpoint_id for spec in runtime.interceptors()}
        self.hub = MeasurementHub(runtime.checkpoints, owners)
        self.units = {u.requirement_name: u for u in runtime.evaluation_units.values()}

        self.pending: List[TriggerEvent] = []
        self.adaptations: Counter = Counter()
        self.mismatches: List[Tuple[int, List[str]]] = []
        self.ticks = 0

    @property
    def ctx(self) -> ContextModel:
        return self.manager.ctx

    # Loop ----------------------------------------------------------------------

    def run(self) -> None:
        """Tick every period until the horizon, take a last reading, then drain."""
        period = settings.MAPE_PERIOD_MS
        horizon = self.sim.horizon_ms
        if horizon <= 0:
            return
        t = period
        while t < horizon:
            self.sim.run_until(t)
            self.tick(t)
            t += period
        self.sim.run_until(horizon)
        self.tick(horizon, plan=False)
        self.sim.drain()

    def tick(self, t: int, plan: bool = True) -> List[TriggerEvent]:
        """
        One pass of the loop at simulated time ``t``.

        Triggers chained by the previous tick are handled before the ones
        raised now, in the order they were queued.

        Returns:
            The triggers raised by this tick's analysis
        """
        self.ticks += 1
        self._observe_environment(t)
        raised = self._monitor_and_analyze(t)

        queue, self.pending = self.pending + raised, []
        if plan and self.adaptation:
            for event in queue:
                self._plan_and_execute(event, t)

        if self.verify:
            mismatches = verify_causal_connection(self.runtime, self.sim)
            if mismatches:
                logger.warning(f"Causal connection broken at t={t}: {len(mismatches)} mismatches")
                self.mismatches.append((t, mismatches))
        return raised

    # Monitor and Analyze --------------------------------------------------------

    def _observe_environment(self, t: int) -> None:
        ctx = self.ctx
        with ctx.batch():
            for observation in self.sim.drain_observations():
                if observation.kind == "assumption":
                    ctx.assert_fact(Assumption(observation.name, bool(observation.value)))
                elif observation.kind == "bandwidth":
                    if observation.value is None:
                        ctx.retract_fact(PropertyValue(LINK_BANDWIDTH, 0.0))
                    else:
                        ctx.assert_fact(PropertyValue(LINK_BANDWIDTH, float(observation.value)))

            resources = self.sim.resources
            ctx.assert_fact(PropertyValue(BATTERY_USED, resources.battery))
            ctx.assert_fact(PropertyValue(MEMORY_USED, resources.memory))
            for name, used, budget in (
                ("Battery", resources.battery, settings.BATTERY_BUDGET),
                ("Memory", resources.memory, settings.MEMORY_BUDGET),
            ):
                current = resource_level(used, budget)
                for level in RESOURCE_LEVELS:
                    ctx.assert_fact(Assumption(f"{name} is {level}", level == current))

    def _monitor_and_analyze(self, t: int) -> List[TriggerEvent]:
        raised: List[TriggerEvent] = []
        measurements: List[Measurement] = []
        for event in self.sim.drain_events():
            measurements.extend(self.hub.feed(event))

        ctx = self.ctx
        for m in measurements:
            self.trace.record(t, TraceKind.MEASURE, property=m.property_name, value=m.value,
                              instance=m.instance_id, measured_at=m.sim_time_ms)
            ctx.assert_fact(PropertyValue(m.property_name, m.value))
            unit = self.units.get(m.property_name)
            if unit is None:
                continue
            previous = unit.last_level
            trigger = evaluate(unit, m)
            if unit.last_level != previous:
                self.trace.record(t, TraceKind.CLASSIFY, requirement=unit.requirement_name,
                                  value=unit.last_value, level=unit.last_level.value)
                ctx.assert_fact(QualityOf(unit.requirement_name, unit.last_level))
            if trigger is not None:
                self._record_trigger(t, trigger)
                raised.append(trigger)
        return raised

    def _record_trigger(self, t: int, event: TriggerEvent) -> None:
        self.trace.record(t, TraceKind.TRIGGER, **event.to_dict())

    # Plan and Execute ---------------------------------------------------------------

    def _plan_and_execute(self, event: TriggerEvent, t: int) -> Optional[PlanExecution]:
        execution = self.planner.select_pattern(event, self.ctx)
        if execution is None:
            logger.warning(f"No adaptation pattern answers '{event.trigger_name}'")
            self.trace.record(t, TraceKind.PLAN_REJECTED, trigger=event.trigger_name, reason="no plan")
            return None
        if execution.outcome != Outcome.ENACTED:
            logger.warning(f"{execution.pattern_id} rejected for '{event.trigger_name}': {execution.reason}")
            self._record_rejection(t, event, execution)
            return execution

        try:
            actions = self.manager.enact(execution.batches)
        except EngineError as e:
            execution.outcome = Outcome.FAILED
            execution.reason = e.message
            logger.error(f"Enacting {execution.pattern_id} failed: {e}")
            self._record_rejection(t, event, execution)
            return execution

        self.trace.record(t, TraceKind.PLAN_SELECTED, pattern=execution.pattern_id,
                          trigger=event.trigger_name, score=execution.score,
                          severity=event.severity.value)
        for tactic in execution.chosen_path:
            self.trace.record(t, TraceKind.TACTIC_APPLIED, pattern=execution.pattern_id,
                              tactic=tactic.kind, args=list(tactic.arguments))
            self.adaptations[tactic.kind] += 1
        self.trace.record(t, TraceKind.RECONFIGURE, pattern=execution.pattern_id, actions=actions)
        self.planner.commit(execution)

        chained: List[TriggerEvent] = []
        for severity, assumption in self.planner.falsifications(execution):
            self.trace.record(t, TraceKind.FALSIFICATION, assumption=assumption,
                              severity=severity, pattern=execution.pattern_id)
            try:
                chained.extend(self.planner.handle_falsification(severity, assumption, execution, self.ctx, t))
            except ChainDepthExceeded as e:
                logger.warning(f"Chain stopped: {e}")
        try:
            chained.extend(self.planner.emitted_events(execution, t))
        except ChainDepthExceeded as e:
            logger.warning(f"Chain stopped: {e}")

        for follow_up in chained:
            self._record_trigger(t, follow_up)
            self.pending.append(follow_up)
        logger.info(
            f"t={t}: {execution.pattern_id} enacted for '{event.trigger_name}' "
            f"({len(execution.chosen_path)} tactics, {len(chained)} chained triggers)"
        )
        return execution

    def _record_rejection(self, t: int, event: TriggerEvent, execution: PlanExecution) -> None:
        self.trace.record(t, TraceKind.PLAN_REJECTED, trigger=event.trigger_name,
                          reason=execution.outcome.value, pattern=execution.pattern_id,
                          detail=execution.reason)

    # Report ---------------------------------------------------------------------

    def report(self) -> RunReport:
        horizon = self.sim.horizon_ms
        return RunReport(
            seed=self.sim.seed,
            horizon_ms=horizon,
            instances_launched=self.sim.launched,
            instances_completed=self.sim.completed,
            instances_failed=self.sim.failed,
            adaptations=dict(self.adaptations),
            time_in_band={name: band_shares(unit.history, horizon) for name, unit in sorted(self.units.items())},
            final_levels={name: unit.last_level.value for name, unit in sorted(self.units.items())},
            resources=self.sim.resources.to_dict(),
            chain_guard_blocks=self.planner.guard.blocks,
        )


def run_scenario(model: AdaptiveProcessModel, seed: Optional[int] = None,
                 horizon_ms: Optional[int] = None, adaptation: bool = True,
                 verify: Optional[bool] = None,
                 library: Optional[TacticLibrary] = None) -> Tuple[RunReport, TraceLog, AdaptationEngine]:
    """
    Transform a model, simulate its scenario and adapt along the way.

    Args:
        model: Validated adaptive process model
        seed: Overrides the scenario seed
        horizon_ms: Overrides the scenario horizon
        adaptation: False monitors and analyzes without planning, for baselines
        verify: Check the causal connection after every tick

    Returns:
        The run report, the trace and the engine
    """
    library = library or default_library()
    scenario = model.scenario or ScenarioScript(seed=0, horizon_ms=horizon_ms or 60000)
    trace = TraceLog()
    runtime = transform(model, library)
    sim = init_sim(runtime, scenario, trace, horizon_ms, seed)
    engine = AdaptationEngine(model, runtime, sim, trace, library, adaptation, verify)

    logger.info(
        f"Running seed={sim.seed} horizon={sim.horizon_ms} ms "
        f"adaptation={'on' if adaptation else 'off'}"
    )
    engine.run()
    report = engine.report()
    logger.info(
        f"Run finished: {report.instances_completed} completed, {report.instances_failed} failed, "
        f"{sum(report.adaptations.values())} tactics applied"
    )
    return report, trace, engine


def adaptation_counts(trace: TraceLog) -> Dict[str, int]:
    """Tactic kinds applied in a trace, counted."""
    return dict(Counter(e.payload["tactic"] for e in trace.of_kind(TraceKind.TACTIC_APPLIED)))
