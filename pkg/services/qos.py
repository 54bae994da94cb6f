"""Quality measurement, classification and structural QoS computation."""

import math
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from config.settings import settings
from models.qos import IDENTITY_QOS, Measurement, QualityLevel, Severity, StructuralQoS, TriggerEvent
from models.runtime import Checkpoint, EvaluationUnit, InterceptorKind
from models.spec import (
    AdaptiveProcessModel,
    FuzzyMeasure,
    NodeKind,
    ProcessNode,
    PropertyKind,
    ProviderProfile,
)
from utils.errors import MissingLeafValue, OrphanEvent


def _product(values: Sequence[float]) -> float:
    return float(math.prod(values))


def _ratio(values: Sequence[float]) -> float:
    """Share of samples equal to 0, i.e. without failure or violation."""
    if not values:
        return 1.0
    return sum(1 for v in values if v == 0) / len(values)


# Named functions usable by derived and aggregated properties
DELEGATES: Dict[str, Callable[[Sequence[float]], float]] = {
    "sum": lambda values: float(math.fsum(values)),
    "average": lambda values: float(math.fsum(values) / len(values)) if values else 0.0,
    "min": lambda values: float(min(values)),
    "max": lambda values: float(max(values)),
    "ratio": _ratio,
    "product": _product,
    "seq_time": lambda values: float(math.fsum(values)),
    "seq_cost": lambda values: float(math.fsum(values)),
    "seq_availability": _product,
    "seq_reliability": _product,
    "par_time": lambda values: float(max(values)),
    "par_cost": lambda values: float(math.fsum(values)),
    "par_availability": _product,
    "par_reliability": _product,
}


def register_delegate(name: str, function: Callable[[Sequence[float]], float]) -> None:
    """Make ``function`` available to derived properties as ``name``."""
    if name in DELEGATES:
        raise ValueError(f"delegate '{name}' is already registered")
    DELEGATES[name] = function


# Classification --------------------------------------------------------------


def classify(fuzzy: FuzzyMeasure, value: float) -> QualityLevel:
    """
    Band of ``value``; both boundaries belong to the tolerable band.

    Args:
        fuzzy: Fuzzy measure
        value: Measured value

    Returns:
        QualityLevel
    """
    if fuzzy.x1 <= value <= fuzzy.x2:
        return QualityLevel.TOLERABLE
    better = value < fuzzy.x1 if fuzzy.orientation == "-" else value > fuzzy.x2
    return QualityLevel.ACCEPTABLE if better else QualityLevel.UNACCEPTABLE


def badness(fuzzy: FuzzyMeasure, value: float) -> float:
    """Degree of badness in [0, 1], rising linearly across the tolerable band."""
    x1, x2 = fuzzy.x1, fuzzy.x2
    if fuzzy.orientation == "-":
        if value <= x1 and value < x2:
            return 0.0
        if value >= x2 and value > x1:
            return 1.0
        return 0.5 if x1 == x2 else (value - x1) / (x2 - x1)
    if value >= x2 and value > x1:
        return 0.0
    if value <= x1 and value < x2:
        return 1.0
    return 0.5 if x1 == x2 else (x2 - value) / (x2 - x1)


# Checkpoints -----------------------------------------------------------------


class InterceptorEvent:
    """An observation reported by an interceptor."""

    __slots__ = ("interceptor_id", "connector_id", "kind", "instance_id", "sim_time_ms", "payload")

    def __init__(self, interceptor_id: str, connector_id: str, kind: InterceptorKind,
                 instance_id: int, sim_time_ms: int, payload: Mapping[str, float]):
        self.interceptor_id = interceptor_id
        self.connector_id = connector_id
        self.kind = kind
        self.instance_id = instance_id
        self.sim_time_ms = sim_time_ms
        self.payload = dict(payload)

    def __repr__(self):
        return (
            f"<InterceptorEvent({self.kind.value} at {self.connector_id}, "
            f"instance={self.instance_id}, t={self.sim_time_ms})>"
        )


def ingest(checkpoint: Checkpoint, event: InterceptorEvent) -> Optional[Measurement]:
    """
    Feed an interceptor event to a basic checkpoint.

    Args:
        checkpoint: Time, Failure, Count, Data or Constraint checkpoint
        event: Interceptor event

    Returns:
        A measurement, or None while waiting for the matching exit

    Raises:
        OrphanEvent: If a block exit arrives without a recorded entry
    """
    kind = checkpoint.kind
    t = event.sim_time_ms
    instance = event.instance_id

    def measured(value: float) -> Measurement:
        return Measurement(checkpoint.property_name, float(value), instance, t)

    if kind in (PropertyKind.TIME, PropertyKind.FAILURE):
        if event.kind == InterceptorKind.BLOCK_ENTRY:
            checkpoint.pending[instance] = t
            if event.payload.get("failed"):
                checkpoint.inherited.add(instance)
            return None
        if kind == PropertyKind.FAILURE and event.kind == InterceptorKind.BLOCK_EXIT and event.payload.get("failed"):
            # the failure event of the same exit carries this outcome
            return None
        if instance not in checkpoint.pending:
            raise OrphanEvent(
                f"{checkpoint.id}: exit of instance {instance} without entry", checkpoint.id
            )
        entered = checkpoint.pending.pop(instance)
        if instance in checkpoint.inherited:
            # failed upstream; the block never ran
            checkpoint.inherited.discard(instance)
            return None
        if kind == PropertyKind.TIME:
            return measured(t - entered)
        return measured(1.0 if event.kind == InterceptorKind.FAILURE else 0.0)

    if kind == PropertyKind.COUNT:
        checkpoint.count += 1
        return measured(checkpoint.count)

    if kind == PropertyKind.DATA:
        return measured(event.payload.get(checkpoint.spec.data_field, 0.0))

    if kind == PropertyKind.CONSTRAINT:
        satisfied = checkpoint.expression.evaluate(event.payload)
        return measured(0.0 if satisfied else 1.0)

    raise ValueError(f"{checkpoint.id}: {kind.value} checkpoints are fed by measurements")


def recompute(checkpoint: Checkpoint, base: Measurement) -> Optional[Measurement]:
    """
    Update a derived or aggregated checkpoint with a base measurement.

    Returns:
        The new value, or None while some derived input is still unknown
    """
    t = base.sim_time_ms
    if checkpoint.kind == PropertyKind.AGGREGATED:
        checkpoint.samples.append((t, base.value))
        if checkpoint.window_ms is not None:
            while checkpoint.samples and checkpoint.samples[0][0] <= t - checkpoint.window_ms:
                checkpoint.samples.popleft()
        values = [v for _, v in checkpoint.samples]
        value = DELEGATES[checkpoint.spec.function](values)
        return Measurement(checkpoint.property_name, value, base.instance_id, t)

    checkpoint.latest[base.property_name] = base.value
    if any(name not in checkpoint.latest for name in checkpoint.inputs):
        return None
    if checkpoint.expression is not None:
        value = checkpoint.expression.evaluate(checkpoint.latest)
    else:
        value = DELEGATES[checkpoint.spec.function]([checkpoint.latest[n] for n in checkpoint.inputs])
    return Measurement(checkpoint.property_name, float(value), base.instance_id, t)


class MeasurementHub:
    """Routes interceptor events to checkpoints and cascades derived values."""

    def __init__(self, checkpoints: Mapping[str, Checkpoint], interceptor_owners: Mapping[str, str]):
        self.checkpoints = checkpoints
        self.interceptor_owners = dict(interceptor_owners)
        self.dependents: Dict[str, List[Checkpoint]] = {}
        for checkpoint in checkpoints.values():
            for name in checkpoint.inputs:
                self.dependents.setdefault(name, []).append(checkpoint)
        self.orphans = 0

    def feed(self, event: InterceptorEvent) -> List[Measurement]:
        """Measurements produced by one interceptor event, bases first."""
        owner = self.interceptor_owners.get(event.interceptor_id)
        if owner is None:
            return []
        try:
            first = ingest(self.checkpoints[owner], event)
        except OrphanEvent as e:
            self.orphans += 1
            logger.warning(f"Dropped orphan event: {e}")
            return []
        if first is None:
            return []
        produced = [first]
        queue = [first]
        while queue:
            base = queue.pop(0)
            for dependent in self.dependents.get(base.property_name, ()):
                derived = recompute(dependent, base)
                if derived is not None:
                    produced.append(derived)
                    queue.append(derived)
        return produced


# Evaluation ------------------------------------------------------------------


def evaluate(unit: EvaluationUnit, measurement: Measurement) -> Optional[TriggerEvent]:
    """
    Classify a measurement and report a worsening transition.

    Windowed units classify the mean of the samples inside the window.
    Entering the tolerable band raises a soft trigger, entering the
    unacceptable band a hard one; staying or improving raises nothing.
    """
    t = measurement.sim_time_ms
    value = measurement.value
    window = unit.fuzzy.window_ms
    if window is not None:
        unit.samples.append((t, value))
        while unit.samples and unit.samples[0][0] <= t - window:
            unit.samples.popleft()
        value = math.fsum(v for _, v in unit.samples) / len(unit.samples)

    level = classify(unit.fuzzy, value)
    previous = unit.last_level
    unit.last_value = value
    if level != previous:
        unit.history.append((t, level))
    unit.last_level = level
    if level.rank <= previous.rank:
        return None
    severity = Severity.SOFT if level == QualityLevel.TOLERABLE else Severity.HARD
    return TriggerEvent(unit.trigger, severity, unit.requirement_name, t)


# Structural QoS --------------------------------------------------------------


def qos_of_provider(profile: ProviderProfile) -> Optional[StructuralQoS]:
    if profile.latency_mean_ms is None:
        return None
    success = 1.0 - profile.failure_probability
    return StructuralQoS(
        response_time=profile.latency_mean_ms,
        cost=profile.cost,
        availability=success,
        reliability=success,
        payload_bytes=profile.payload_bytes,
    )


def leaf_values_from_catalog(model: AdaptiveProcessModel) -> Dict[str, StructuralQoS]:
    """QoS of every service whose bound provider declares a latency."""
    leaves = {}
    for service in model.service_catalog:
        value = qos_of_provider(service.providers[0])
        if value is not None:
            leaves[service.name] = value
    return leaves


def _weighted(parts: Sequence[Tuple[float, StructuralQoS]]) -> StructuralQoS:
    return StructuralQoS(**{
        name: math.fsum(p * getattr(q, name) for p, q in parts)
        for name in StructuralQoS.ATTRIBUTES
    })


def structural_qos(
    node: ProcessNode,
    leaf_values: Mapping[str, StructuralQoS],
    overrides: Optional[Mapping[str, StructuralQoS]] = None,
    path: str = "root",
    opt_probability: Optional[float] = None,
) -> StructuralQoS:
    """
    Expected QoS of a workflow subtree.

    Sequences add times and costs and multiply availability and
    reliability; loops repeat their body k times; selections weight their
    branches; parallel splits take the slowest branch; an optional node is a
    selection between its child and doing nothing.

    Args:
        node: Subtree root
        leaf_values: QoS per service name
        overrides: QoS replacing whole subtrees, keyed by workflow path
        path: Workflow path of ``node``
        opt_probability: Default probability of Opt nodes

    Raises:
        MissingLeafValue: If a service has no value
    """
    overrides = overrides or {}
    if path in overrides:
        return overrides[path]
    if opt_probability is None:
        opt_probability = settings.OPT_DEFAULT_PROBABILITY

    def child(i: int) -> StructuralQoS:
        return structural_qos(node.children[i], leaf_values, overrides, f"{path}.{i}", opt_probability)

    if node.kind == NodeKind.SERVICE:
        if node.service not in leaf_values:
            raise MissingLeafValue(f"no QoS value for service '{node.service}'", node.service)
        return leaf_values[node.service]

    parts = [child(i) for i in range(len(node.children))]
    if node.kind == NodeKind.SEQ:
        return StructuralQoS(
            response_time=math.fsum(q.response_time for q in parts),
            cost=math.fsum(q.cost for q in parts),
            availability=_product([q.availability for q in parts]),
            reliability=_product([q.reliability for q in parts]),
            payload_bytes=parts[-1].payload_bytes,
            battery=math.fsum(q.battery for q in parts),
            memory=math.fsum(q.memory for q in parts),
        )
    if node.kind == NodeKind.LOOP:
        body, k = parts[0], node.k
        return StructuralQoS(
            response_time=k * body.response_time,
            cost=k * body.cost,
            availability=body.availability ** k,
            reliability=body.reliability ** k,
            payload_bytes=body.payload_bytes,
            battery=k * body.battery,
            memory=k * body.memory,
        )
    if node.kind == NodeKind.SEL:
        return _weighted(list(zip(node.probabilities, parts)))
    if node.kind == NodeKind.OPT:
        p = node.opt_probability(opt_probability)
        return _weighted([(p, parts[0]), (1.0 - p, IDENTITY_QOS)])
    # and_par
    return StructuralQoS(
        response_time=max(q.response_time for q in parts),
        cost=math.fsum(q.cost for q in parts),
        availability=_product([q.availability for q in parts]),
        reliability=_product([q.reliability for q in parts]),
        payload_bytes=math.fsum(q.payload_bytes for q in parts),
        battery=math.fsum(q.battery for q in parts),
        memory=math.fsum(q.memory for q in parts),
    )


def block_qos_table(model: AdaptiveProcessModel,
                    leaf_values: Optional[Mapping[str, StructuralQoS]] = None) -> Dict[str, StructuralQoS]:
    """Structural QoS of every labeled process, keyed by label."""
    leaves = leaf_values_from_catalog(model) if leaf_values is None else leaf_values
    table = {}
    for label, (path, node) in model.labeled_nodes().items():
        table[label] = structural_qos(node, leaves, path=path)
    return table


# Monte Carlo -----------------------------------------------------------------


def _sample(node: ProcessNode, profiles: Mapping[str, ProviderProfile], n: int,
            rng: np.random.Generator, opt_probability: float):
    """Arrays of (time, cost, ok, payload) for n independent executions."""
    if node.kind == NodeKind.SERVICE:
        profile = profiles.get(node.service)
        if profile is None or profile.latency_mean_ms is None:
            raise MissingLeafValue(f"no profile for service '{node.service}'", node.service)
        if profile.latency_stddev_ms > 0:
            times = np.maximum(rng.normal(profile.latency_mean_ms, profile.latency_stddev_ms, n), 0.0)
        else:
            times = np.full(n, float(profile.latency_mean_ms))
        ok = rng.random(n) >= profile.failure_probability
        return times, np.full(n, float(profile.cost)), ok, np.full(n, float(profile.payload_bytes))

    if node.kind == NodeKind.LOOP:
        time, cost = np.zeros(n), np.zeros(n)
        ok = np.ones(n, dtype=bool)
        payload = np.zeros(n)
        for _ in range(node.k):
            t, c, o, payload = _sample(node.children[0], profiles, n, rng, opt_probability)
            time, cost, ok = time + t, cost + c, ok & o
        return time, cost, ok, payload

    if node.kind in (NodeKind.SEL, NodeKind.OPT):
        if node.kind == NodeKind.SEL:
            probabilities = np.asarray(node.probabilities, dtype=float)
            branches = list(node.children)
        else:
            p = node.opt_probability(opt_probability)
            probabilities = np.asarray([p, 1.0 - p])
            branches = [node.children[0], None]
        choice = rng.choice(len(branches), size=n, p=probabilities / probabilities.sum())
        time, cost, payload = np.zeros(n), np.zeros(n), np.zeros(n)
        ok = np.ones(n, dtype=bool)
        for index, branch in enumerate(branches):
            if branch is None:
                continue
            t, c, o, pl = _sample(branch, profiles, n, rng, opt_probability)
            chosen = choice == index
            time = np.where(chosen, t, time)
            cost = np.where(chosen, c, cost)
            ok = np.where(chosen, o, ok)
            payload = np.where(chosen, pl, payload)
        return time, cost, ok, payload

    samples = [_sample(c, profiles, n, rng, opt_probability) for c in node.children]
    if node.kind == NodeKind.SEQ:
        time = np.sum([s[0] for s in samples], axis=0)
        payload = samples[-1][3]
    else:
        time = np.max([s[0] for s in samples], axis=0)
        payload = np.sum([s[3] for s in samples], axis=0)
    cost = np.sum([s[1] for s in samples], axis=0)
    ok = np.logical_and.reduce([s[2] for s in samples])
    return time, cost, ok, payload


def monte_carlo_qos(
    node: ProcessNode,
    profiles: Mapping[str, ProviderProfile],
    n: int,
    rng: np.random.Generator,
    opt_probability: Optional[float] = None,
) -> StructuralQoS:
    """
    Estimate subtree QoS by sampling ``n`` executions.

    Every invoked service draws its latency from a normal distribution
    clamped at zero and fails independently; an execution is available
    when no invoked service failed.
    """
    if opt_probability is None:
        opt_probability = settings.OPT_DEFAULT_PROBABILITY
    time, cost, ok, payload = _sample(node, profiles, n, rng, opt_probability)
    share = float(np.mean(ok))
    return StructuralQoS(
        response_time=float(np.mean(time)),
        cost=float(np.mean(cost)),
        availability=share,
        reliability=share,
        payload_bytes=float(np.mean(payload)),
    )


def bound_profiles(model: AdaptiveProcessModel) -> Dict[str, ProviderProfile]:
    """The provider bound to each service, keyed by service name."""
    return {s.name: s.providers[0] for s in model.service_catalog}


def band_shares(history: Iterable[Tuple[int, QualityLevel]], end_ms: int) -> Dict[str, float]:
    """Percentage of ``[0, end_ms]`` spent in each band, starting acceptable."""
    shares = {level.value: 0.0 for level in QualityLevel}
    if end_ms <= 0:
        shares[QualityLevel.ACCEPTABLE.value] = 100.0
        return shares
    level, since = QualityLevel.ACCEPTABLE, 0
    for t, new_level in history:
        t = min(max(t, since), end_ms)
        shares[level.value] += t - since
        level, since = new_level, t
    shares[level.value] += end_ms - since
    return {name: 100.0 * value / end_ms for name, value in shares.items()}
