"""Deterministic discrete-event simulator of the execution layer.

Service components sample latency and failure from their provider profile;
connectors route messages according to their kind. Time is integer
milliseconds. All randomness comes from one seeded numpy generator, drawn
in event order, so a run is reproducible from the model and the seed.
"""

import copy
import hashlib
import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from config.settings import settings
from models.runtime import ConnectorType, InterceptorKind, InterceptorSpec, RoutingTable, RuntimeModel
from models.qos import ResourceCounters
from models.spec import ProviderProfile, ScenarioAction, ScenarioEvent, ScenarioScript
from models.trace import TraceKind
from services.qos import InterceptorEvent
from services.tactics import CACHE_FILTERS
from utils.errors import NotFoundError, RoutingError
from utils.expressions import Expression, parse_expression
from utils.tracing import TraceLog


@dataclass
class Message:
    """A workflow token travelling between nodes."""

    instance_id: int
    payload_bytes: float
    origin: str
    destination: str
    enqueue_time_ms: int
    failed: bool = False
    failed_at: Optional[str] = None
    cost: float = 0.0
    transit_pending: bool = False
    tags: Dict[str, Any] = field(default_factory=dict)

    def fork(self) -> "Message":
        return copy.deepcopy(self)


@dataclass
class Instance:
    id: int
    started_ms: int
    done: bool = False
    failed: bool = False
    # fork and serial join states opened for this instance
    joins: List[Tuple[str, int]] = field(default_factory=list)


@dataclass(frozen=True)
class Observation:
    """A change of the environment reported to the Monitor phase."""

    kind: str
    name: str
    value: Any
    sim_time_ms: int


# Event kinds on the queue
_ARRIVE = "arrive"
_COMPLETE = "complete"
_SCENARIO = "scenario"
_LAUNCH = "launch"


class SimulatorState:
    """
    Event queue, routing table, in-flight instances and environment.

    The routing table is the simulator's own copy of the runtime model's
    table; the configuration manager replaces it between events.
    """

    def __init__(self, runtime: RuntimeModel, scenario: ScenarioScript,
                 trace: Optional[TraceLog] = None, horizon_ms: Optional[int] = None,
                 seed: Optional[int] = None):
        self.table: RoutingTable = runtime.table.copy()
        self.horizon_ms = scenario.horizon_ms if horizon_ms is None else horizon_ms
        self.seed = scenario.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.trace = trace
        self.sim_time_ms = 0
        self.bandwidth_bytes_per_ms: Optional[float] = None
        self.resources = ResourceCounters()
        self.instances: Dict[int, Instance] = {}
        self.launched = 0
        self.completed = 0
        self.failed = 0

        root = runtime.process_blocks[runtime.root_block]
        self.source = root.start_connector
        self.sink = root.end_connector

        self.profiles: Dict[str, ProviderProfile] = {
            c.provider.provider_id: c.provider for c in self.table.components.values()
        }

        self._queue: List[Tuple[int, int, str, tuple]] = []
        self._seq = itertools.count()
        self._tokens = itertools.count(1)
        self._next_instance = 1
        self._launch_generation = 0
        self._joins: Dict[Tuple[str, int], Dict[str, Any]] = {}
        self._held: Dict[str, Deque[Message]] = {}
        self._conditions: Dict[str, Expression] = {}
        self._events: List[InterceptorEvent] = []
        self._observations: List[Observation] = []

        for event in scenario.events:
            if event.at_ms < self.horizon_ms:
                self._schedule(event.at_ms, _SCENARIO, (event,))

        self._routers: Dict[ConnectorType, Callable[[str, Message], None]] = {
            ConnectorType.PAR_OUT: self._fork_all,
            ConnectorType.PAR_IN: self._join_all,
            ConnectorType.PARALLEL_OUT: self._fork_all,
            ConnectorType.PARALLEL_IN: self._join_first,
            ConnectorType.SERIAL_OUT: self._serial_out,
            ConnectorType.SERIAL_IN: self._serial_in,
            ConnectorType.SEL_OUT: self._select,
            ConnectorType.LOOP_IN: self._loop,
            ConnectorType.CONDITION: self._condition,
            ConnectorType.COMPRESSOR_OUT: self._compress,
            ConnectorType.COMPRESSOR_IN: self._decompress,
            ConnectorType.DATA_MODIFIER_OUT: self._modify,
            ConnectorType.DATA_MODIFIER_IN: self._restore,
            ConnectorType.CACHE_ELEMENT: self._cache,
            ConnectorType.QUEUE: self._queue_or_forward,
        }

    # Event queue -------------------------------------------------------------

    def _schedule(self, t: int, kind: str, args: tuple) -> None:
        heapq.heappush(self._queue, (int(t), next(self._seq), kind, args))

    def _record(self, kind: TraceKind, **payload: Any) -> None:
        if self.trace is not None:
            self.trace.record(self.sim_time_ms, kind, **payload)

    def pending(self) -> int:
        return len(self._queue)

    def next_event_time(self) -> Optional[int]:
        return self._queue[0][0] if self._queue else None

    def step(self) -> List[InterceptorEvent]:
        """Process the earliest event; returns the interceptor events it produced."""
        if not self._queue:
            return []
        t, _, kind, args = heapq.heappop(self._queue)
        self.sim_time_ms = max(self.sim_time_ms, t)
        before = len(self._events)
        if kind == _SCENARIO:
            self._apply_scenario(args[0])
        elif kind == _LAUNCH:
            self._launch(args[0])
        else:
            message = args[1]
            instance = self.instances.get(message.instance_id)
            if instance is None or instance.done:
                return []
            try:
                if kind == _ARRIVE:
                    self._arrive(args[0], message)
                else:
                    self._complete(args[0], message, args[2])
            except RoutingError as e:
                logger.warning(f"Routing error for instance {message.instance_id}: {e}")
                self._finish(message, failed=True, reason=f"routing error: {e.message}")
        return self._events[before:]

    def run_until(self, t: int) -> int:
        """Process every event scheduled at or before ``t``; returns how many."""
        processed = 0
        while self._queue and self._queue[0][0] <= t:
            self.step()
            processed += 1
        self.sim_time_ms = max(self.sim_time_ms, int(t))
        return processed

    def drain(self, grace_ms: Optional[int] = None) -> None:
        """Let in-flight instances finish, then fail whatever is left."""
        grace = settings.DRAIN_MS if grace_ms is None else grace_ms
        self.run_until(self.horizon_ms + grace)
        for instance in sorted(self.instances.values(), key=lambda i: i.id):
            if not instance.done:
                instance.done = True
                instance.failed = True
                self._release_joins(instance)
                self.failed += 1
                self._record(TraceKind.FAIL, instance=instance.id, reason="unfinished after drain")
        self._queue.clear()
        self._held.clear()

    def drain_events(self) -> List[InterceptorEvent]:
        events, self._events = self._events, []
        return events

    def drain_observations(self) -> List[Observation]:
        observations, self._observations = self._observations, []
        return observations

    # Reconfiguration -----------------------------------------------------------

    def configure(self, table: RoutingTable) -> None:
        """
        Switch to a new routing table between events.

        Messages already dispatched keep their path. Messages held by a
        queue connector that no longer exists move on to the queue's
        former first target, or fail their instance when that is gone too.
        """
        old = self.table
        self.table = table.copy()
        for con_id in list(self._held):
            if self.table.has_node(con_id):
                continue
            held = self._held.pop(con_id)
            targets = old.outs.get(con_id, [])
            for message in held:
                if targets and self.table.has_node(targets[0]):
                    self._send(message, con_id, targets[0])
                else:
                    self._finish(message, failed=True, reason=f"queue {con_id} removed")
        self._conditions.clear()

    def install_interceptor(self, spec: InterceptorSpec) -> None:
        connector = self.table.connectors.get(spec.connector_id)
        if connector is None:
            raise NotFoundError(f"no connector '{spec.connector_id}'", spec.connector_id)
        connector.installed_interceptors.append(spec)

    def uninstall_interceptor(self, interceptor_id: str) -> None:
        for connector in self.table.connectors.values():
            for spec in connector.installed_interceptors:
                if spec.id == interceptor_id:
                    connector.installed_interceptors.remove(spec)
                    return
        raise NotFoundError(f"no interceptor '{interceptor_id}'", interceptor_id)

    # Scenario --------------------------------------------------------------------

    def _apply_scenario(self, event: ScenarioEvent) -> None:
        action = event.action
        details = event.model_dump(mode="json", exclude_none=True, exclude={"at_ms", "action"})
        self._record(TraceKind.SCENARIO_EVENT, action=action.value, **details)
        if action == ScenarioAction.SET_PROVIDER_LATENCY:
            self._update_profile(event.provider, latency_mean_ms=event.mean,
                                 latency_stddev_ms=event.stddev or 0.0)
        elif action == ScenarioAction.SET_PROVIDER_FAILURE:
            self._update_profile(event.provider, failure_probability=event.p)
        elif action == ScenarioAction.SET_BANDWIDTH:
            self.set_bandwidth(event.bytes_per_ms)
        elif action == ScenarioAction.ASSERT_ASSUMPTION:
            self._observe("assumption", event.name, True)
        elif action == ScenarioAction.RETRACT_ASSUMPTION:
            self._observe("assumption", event.name, False)
        elif action == ScenarioAction.START_INSTANCES:
            self.start_instances(event.rate_per_s or 0.0)

    def _observe(self, kind: str, name: str, value: Any) -> None:
        self._observations.append(Observation(kind, name, value, self.sim_time_ms))

    def _update_profile(self, provider_id: str, **changes: Any) -> None:
        profile = self.profiles.get(provider_id)
        if profile is None:
            logger.warning(f"Scenario names unknown provider {provider_id}")
            return
        self.profiles[provider_id] = profile.model_copy(update=changes)

    def set_bandwidth(self, bytes_per_ms: Optional[float]) -> None:
        """Change the link capacity; None means unlimited and 0 means down."""
        self.bandwidth_bytes_per_ms = bytes_per_ms
        self._observe("bandwidth", "link", bytes_per_ms)
        if bytes_per_ms is None or bytes_per_ms > 0:
            for con_id in list(self._held):
                held = self._held.pop(con_id)
                while held:
                    self._forward(con_id, held.popleft())

    def start_instances(self, rate_per_s: float) -> None:
        """Launch instances periodically from now on; replaces any earlier rate."""
        self._launch_generation += 1
        if rate_per_s > 0:
            period = max(1, round(1000.0 / rate_per_s))
            self._schedule(self.sim_time_ms, _LAUNCH, ((self._launch_generation, period),))

    def _launch(self, generation_period: Tuple[int, int]) -> None:
        generation, period = generation_period
        if generation != self._launch_generation or self.sim_time_ms >= self.horizon_ms:
            return
        self.launch_instance()
        self._schedule(self.sim_time_ms + period, _LAUNCH, ((generation, period),))

    def launch_instance(self) -> int:
        instance_id = self._next_instance
        self._next_instance += 1
        self.instances[instance_id] = Instance(instance_id, self.sim_time_ms)
        self.launched += 1
        message = Message(instance_id, 0.0, "launch", self.source, self.sim_time_ms)
        self._schedule(self.sim_time_ms, _ARRIVE, (self.source, message))
        return instance_id

    # Routing ----------------------------------------------------------------------

    def _send(self, message: Message, source: str, target: str, delay: int = 0) -> None:
        """Schedule ``message`` to reach ``target``, charging link transit once per hop out of a connector."""
        if not self.table.has_node(target):
            raise RoutingError(f"{source} routes to missing node {target}", target)
        transit = 0
        if message.transit_pending and source in self.table.connectors:
            message.transit_pending = False
            bandwidth = self.bandwidth_bytes_per_ms
            if bandwidth is not None:
                if bandwidth <= 0:
                    if not message.failed:
                        message.failed = True
                        message.failed_at = "link"
                else:
                    transit = int(round(message.payload_bytes / bandwidth))
        message.origin = source
        message.destination = target
        message.enqueue_time_ms = self.sim_time_ms
        self._schedule(self.sim_time_ms + delay + transit, _ARRIVE, (target, message))

    def _outs(self, node: str) -> List[str]:
        outs = self.table.outs.get(node)
        if not outs:
            raise RoutingError(f"{node} has no outbound binding", node)
        return outs

    def _forward(self, node: str, message: Message, delay: int = 0) -> None:
        self._send(message, node, self._outs(node)[0], delay)

    def _arrive(self, node: str, message: Message) -> None:
        component = self.table.components.get(node)
        if component is not None:
            self._invoke(node, message)
            return
        connector = self.table.connectors.get(node)
        if connector is None:
            raise RoutingError(f"message reached missing node {node}", node)
        self._intercept(node, message)
        if node == self.sink:
            self._finish(message, failed=message.failed, reason="service failure")
            return
        router = self._routers.get(connector.con_type)
        if router is None:
            self._forward(node, message)
        else:
            router(node, message)

    def _invoke(self, sc_id: str, message: Message) -> None:
        outs = list(self._outs(sc_id))
        if message.failed:
            self._send(message, sc_id, outs[0])
            return
        component = self.table.components[sc_id]
        profile = self.profiles.get(component.provider.provider_id, component.provider)
        self._record(TraceKind.INVOKE, instance=message.instance_id, component=sc_id,
                     provider=profile.provider_id)
        mean = profile.latency_mean_ms or 0.0
        latency = int(round(max(0.0, float(self.rng.normal(mean, profile.latency_stddev_ms)))))
        failed = bool(self.rng.random() < profile.failure_probability)
        self._schedule(self.sim_time_ms + latency, _COMPLETE, (sc_id, message, (outs, failed, profile)))

    def _complete(self, sc_id: str, message: Message, outcome: tuple) -> None:
        outs, failed, profile = outcome
        message.payload_bytes = profile.payload_bytes
        message.cost += profile.cost
        message.transit_pending = True
        if failed:
            message.failed = True
            message.failed_at = sc_id
            self._record(TraceKind.FAIL, instance=message.instance_id, reason="service failure",
                         component=sc_id)
        self._send(message, sc_id, outs[0])

    def _finish(self, message: Message, failed: bool, reason: str) -> None:
        instance = self.instances[message.instance_id]
        if instance.done:
            return
        instance.done = True
        instance.failed = failed
        self._release_joins(instance)
        latency = self.sim_time_ms - instance.started_ms
        if failed:
            self.failed += 1
            self._record(TraceKind.FAIL, instance=instance.id, reason=reason,
                         component=message.failed_at, latency_ms=latency)
        else:
            self.completed += 1
            self._record(TraceKind.COMPLETE, instance=instance.id, latency_ms=latency)

    # Interceptors -------------------------------------------------------------------

    def _intercept(self, con_id: str, message: Message) -> None:
        connector = self.table.connectors[con_id]
        if not connector.installed_interceptors:
            return
        payload = {
            "payload_bytes": message.payload_bytes,
            "cost": message.cost,
            "latency_ms": self.sim_time_ms - self.instances[message.instance_id].started_ms,
            "battery": self.resources.battery,
            "memory": self.resources.memory,
            "failed": message.failed,
        }
        for spec in connector.installed_interceptors:
            for kind in spec.event_kinds:
                if kind == InterceptorKind.FAILURE and not message.failed:
                    continue
                if kind == InterceptorKind.BLOCK_ENTRY and connector.con_type != ConnectorType.BLOCK_START:
                    continue
                self._events.append(InterceptorEvent(
                    spec.id, con_id, kind, message.instance_id, self.sim_time_ms, payload,
                ))

    # Connector kinds ---------------------------------------------------------------

    def _open_join(self, node: str, message: Message) -> int:
        token = next(self._tokens)
        self.instances[message.instance_id].joins.append((node, token))
        return token

    def _release_joins(self, instance: Instance) -> None:
        for key in instance.joins:
            self._joins.pop(key, None)
        instance.joins.clear()

    def _fork_all(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        token = self._open_join(node, message)
        self._joins[(node, token)] = {
            "expected": len(outs), "arrived": [], "base_cost": message.cost, "forwarded": False,
        }
        for target in outs:
            branch = message.fork()
            branch.tags[node] = token
            self._send(branch, node, target)

    def _join_all(self, node: str, message: Message) -> None:
        partner = self.table.connectors[node].params.get("partner")
        token = message.tags.pop(partner, None) if partner else None
        state = self._joins.get((partner, token)) if token is not None else None
        if state is None:
            self._forward(node, message)
            return
        state["arrived"].append(message)
        if len(state["arrived"]) < state["expected"]:
            return
        del self._joins[(partner, token)]
        arrived = state["arrived"]
        merged = arrived[-1]
        merged.payload_bytes = float(sum(m.payload_bytes for m in arrived))
        merged.cost = state["base_cost"] + sum(m.cost - state["base_cost"] for m in arrived)
        failures = [m for m in arrived if m.failed]
        if failures:
            merged.failed = True
            merged.failed_at = failures[0].failed_at
        merged.transit_pending = any(m.transit_pending for m in arrived)
        self._forward(node, merged)

    def _join_first(self, node: str, message: Message) -> None:
        partner = self.table.connectors[node].params.get("partner")
        token = message.tags.pop(partner, None) if partner else None
        state = self._joins.get((partner, token)) if token is not None else None
        if state is None:
            self._forward(node, message)
            return
        state["arrived"].append(message)
        complete = len(state["arrived"]) >= state["expected"]
        if complete:
            del self._joins[(partner, token)]
        if state["forwarded"]:
            return
        if not message.failed or complete:
            state["forwarded"] = True
            self._forward(node, message)

    def _serial_out(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        token = self._open_join(node, message)
        self._joins[(node, token)] = {
            "backup": message.fork(),
            "secondary": outs[1] if len(outs) > 1 else None,
            "stage": "primary",
        }
        message.tags[node] = token
        self._send(message, node, outs[0])

    def _serial_in(self, node: str, message: Message) -> None:
        partner = self.table.connectors[node].params.get("partner")
        token = message.tags.pop(partner, None) if partner else None
        state = self._joins.get((partner, token)) if token is not None else None
        if state is None:
            self._forward(node, message)
            return
        if message.failed and state["stage"] == "primary" and state["secondary"] is not None:
            state["stage"] = "secondary"
            retry = state["backup"]
            retry.tags[partner] = token
            self._send(retry, partner, state["secondary"])
            return
        del self._joins[(partner, token)]
        self._forward(node, message)

    def _select(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        probabilities = self.table.connectors[node].params.get("probabilities") or [1.0]
        draw = float(self.rng.random())
        cumulative = 0.0
        choice = min(len(outs), len(probabilities)) - 1
        for index, p in enumerate(probabilities[:len(outs)]):
            cumulative += p
            if draw < cumulative:
                choice = index
                break
        self._send(message, node, outs[choice])

    def _loop(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        k = int(self.table.connectors[node].params.get("k") or 1)
        done = message.tags.get(node, 0) + 1
        if done < k and not message.failed:
            message.tags[node] = done
            self._send(message, node, outs[0])
            return
        message.tags.pop(node, None)
        if len(outs) < 2:
            raise RoutingError(f"loop {node} has no exit binding", node)
        self._send(message, node, outs[1])

    def _condition(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        params = self.table.connectors[node].params
        cap = int(params.get("cap") or settings.REEXECUTE_CAP)
        if node not in self._conditions:
            self._conditions[node] = parse_expression(str(params.get("condition") or "not failed"))
        attempts = message.tags.get(node, 1)
        service = outs[0]
        variables = {
            "failed": message.failed,
            "payload_bytes": message.payload_bytes,
            "attempts": attempts,
            "latency_ms": self.sim_time_ms - self.instances[message.instance_id].started_ms,
        }
        satisfied = bool(self._conditions[node].evaluate(variables))
        retryable = not message.failed or message.failed_at == service
        if not satisfied and attempts < cap and retryable:
            message.tags[node] = attempts + 1
            message.failed = False
            message.failed_at = None
            message.transit_pending = False
            self._send(message, node, service)
            return
        message.tags.pop(node, None)
        if len(outs) < 2:
            raise RoutingError(f"condition {node} has no continuation", node)
        self._send(message, node, outs[1])

    def _compress(self, node: str, message: Message) -> None:
        params = self.table.connectors[node].params
        message.tags[node] = message.payload_bytes
        message.payload_bytes = message.payload_bytes * float(params.get("ratio", 1.0))
        self.resources.battery += float(params.get("battery_cost", 0.0))
        self._forward(node, message, delay=int(params.get("cpu_ms", 0)))

    def _decompress(self, node: str, message: Message) -> None:
        params = self.table.connectors[node].params
        original = message.tags.pop(params.get("partner"), None)
        if original is not None:
            message.payload_bytes = original
        self.resources.battery += float(params.get("battery_cost", 0.0))
        self._forward(node, message, delay=int(params.get("cpu_ms", 0)))

    def _modify(self, node: str, message: Message) -> None:
        params = self.table.connectors[node].params
        message.tags[node] = message.payload_bytes
        message.payload_bytes = message.payload_bytes * float(params.get("factor", 1.0))
        self._forward(node, message)

    def _restore(self, node: str, message: Message) -> None:
        original = message.tags.pop(self.table.connectors[node].params.get("partner"), None)
        if original is not None:
            message.payload_bytes = original
        self._forward(node, message)

    def _cache(self, node: str, message: Message) -> None:
        outs = self._outs(node)
        params = self.table.connectors[node].params
        accepts = CACHE_FILTERS.get(params.get("filter") or "all", CACHE_FILTERS["all"])
        if len(outs) > 1 and accepts({"payload_bytes": message.payload_bytes}):
            if self.rng.random() < float(params.get("hit_ratio", 0.0)):
                service = self.table.components.get(outs[0])
                if service is not None:
                    profile = self.profiles.get(service.provider.provider_id, service.provider)
                    message.payload_bytes = profile.payload_bytes
                message.transit_pending = False
                self._send(message, node, outs[1])
                return
        self._send(message, node, outs[0])

    def _queue_or_forward(self, node: str, message: Message) -> None:
        if self.bandwidth_bytes_per_ms is not None and self.bandwidth_bytes_per_ms <= 0:
            self._held.setdefault(node, deque()).append(message)
            self.resources.memory += float(self.table.connectors[node].params.get("memory_cost", 0.0))
            return
        self._forward(node, message)

    # Diagnostics -------------------------------------------------------------------------

    def held_messages(self) -> int:
        return sum(len(held) for held in self._held.values())

    def fingerprint(self) -> str:
        """Digest of the observable state, for reproducibility checks."""
        state = {
            "t": self.sim_time_ms,
            "launched": self.launched,
            "completed": self.completed,
            "failed": self.failed,
            "resources": self.resources.to_dict(),
            "outs": {k: list(v) for k, v in sorted(self.table.outs.items())},
            "pending": len(self._queue),
        }
        return hashlib.sha256(json.dumps(state, sort_keys=True).encode("utf-8")).hexdigest()


def init_sim(runtime: RuntimeModel, scenario: Optional[ScenarioScript] = None,
             trace: Optional[TraceLog] = None, horizon_ms: Optional[int] = None,
             seed: Optional[int] = None) -> SimulatorState:
    """
    Create a simulator for a runtime model.

    Args:
        runtime: Runtime model whose bindings the simulator mirrors
        scenario: Scenario script; an idle one-minute script when omitted
        trace: Trace log receiving invoke, complete, fail and scenario events
        horizon_ms: Overrides the scenario horizon
        seed: Overrides the scenario seed
    """
    scenario = scenario or ScenarioScript(seed=0, horizon_ms=60000)
    sim = SimulatorState(runtime, scenario, trace, horizon_ms, seed)
    logger.debug(f"Simulator ready: seed={sim.seed}, horizon={sim.horizon_ms} ms")
    return sim
