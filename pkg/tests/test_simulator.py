"""Tests for the discrete-event simulator."""

import pytest

from config.settings import settings
from models.trace import TraceKind
from services.configuration import ConfigurationManager
from services.context_store import context_from_runtime
from services.qos import MeasurementHub, qos_of_provider
from services.simulator import init_sim
from services.tactics import instantiate, predict_effect
from services.transform import transform
from tests.factories import (
    and_par,
    build,
    document,
    emergency,
    loop,
    provider,
    seq,
    service,
    svc,
    time_requirement,
)
from utils.errors import NotFoundError
from utils.tracing import TraceLog


def simulate(doc, horizon_ms=10000, seed=1):
    model = build(doc)
    runtime = transform(model)
    trace = TraceLog()
    sim = init_sim(runtime, model.scenario, trace, horizon_ms=horizon_ms, seed=seed)
    return runtime, sim, trace


def enact(runtime, sim, kind, arguments, **params):
    providers = {c.provider.provider_id: c.provider for c in runtime.components.values()}
    manager = ConfigurationManager(runtime, context_from_runtime(runtime), sim, providers)
    tactic = instantiate(kind, arguments, manager.ctx, params=params or None)
    manager.enact([tactic.batch])
    return tactic


def invoke_times(trace, component):
    return [e.t for e in trace.of_kind(TraceKind.INVOKE) if e.payload["component"] == component]


def completions(trace):
    return [e.payload["latency_ms"] for e in trace.of_kind(TraceKind.COMPLETE)]


TWO_STEP = document(
    seq(svc("a"), svc("b")),
    [service("a", latency=100, payload=1000), service("b", latency=100)],
)


def test_runs_are_reproducible():
    """The same model and seed give the same trace and state."""
    model = emergency()
    runs = []
    for _ in range(2):
        trace = TraceLog()
        sim = init_sim(transform(model), model.scenario, trace)
        sim.run_until(sim.horizon_ms)
        sim.drain()
        runs.append((sim.fingerprint(), trace.lines()))
    assert runs[0] == runs[1]
    assert len(runs[0][1]) > 0


def test_no_instances_without_start():
    """An empty scenario launches nothing."""
    _, sim, trace = simulate(TWO_STEP)
    sim.run_until(sim.horizon_ms)
    assert sim.launched == 0
    assert len(trace) == 0


def test_start_instances_rate():
    """One instance per second over ten seconds launches ten."""
    doc = dict(TWO_STEP, scenario={
        "seed": 3, "horizon_ms": 10000,
        "events": [{"at_ms": 0, "action": "start_instances", "rate_per_s": 1}],
    })
    _, sim, trace = simulate(doc, horizon_ms=None, seed=None)
    sim.run_until(sim.horizon_ms)
    sim.drain()
    assert sim.launched == 10
    assert sim.completed + sim.failed == sim.launched
    assert sim.seed == 3
    assert trace.of_kind(TraceKind.SCENARIO_EVENT)[0].payload == {"action": "start_instances", "rate_per_s": 1.0}


def test_instances_are_conserved():
    """After draining every launched instance has completed or failed."""
    model = emergency()
    sim = init_sim(transform(model), model.scenario, TraceLog())
    sim.run_until(sim.horizon_ms)
    sim.drain()
    assert sim.launched > 0
    assert sim.launched == sim.completed + sim.failed
    assert sim.failed > 0


def test_sequence_latency():
    """A sequence takes the sum of its latencies."""
    _, sim, trace = simulate(TWO_STEP)
    sim.launch_instance()
    sim.run_until(1000)
    assert completions(trace) == [200]
    assert invoke_times(trace, "root.1.SC:b") == [100]


def test_and_par_waits_for_slowest():
    """Parallel branches join when the last one arrives."""
    doc = document(and_par(svc("a"), svc("b")), [service("a", latency=100), service("b", latency=300)])
    _, sim, trace = simulate(doc)
    sim.launch_instance()
    sim.run_until(1000)
    assert completions(trace) == [300]


def test_loop_repeats_body():
    """A loop invokes its body k times."""
    doc = document(loop(3, svc("a")), [service("a", latency=100)])
    _, sim, trace = simulate(doc)
    sim.launch_instance()
    sim.run_until(1000)
    assert len(invoke_times(trace, "root.0.SC:a")) == 3
    assert completions(trace) == [300]


def test_parallel_takes_first_response():
    """With redundant providers the first successful response wins."""
    doc = document(svc("a"), [service("a", provider("p1", latency=110), provider("p2", latency=125))])
    runtime, sim, trace = simulate(doc)
    enact(runtime, sim, "parallel", ["root.SC:a", "standby.SC:a#p2"])
    sim.launch_instance()
    sim.run_until(1000)
    assert completions(trace) == [110]
    assert len(trace.of_kind(TraceKind.INVOKE)) == 2


def test_serial_calls_backup_after_failure():
    """The backup runs only when the primary fails."""
    doc = document(svc("a"), [service("a", provider("p1", latency=100, fail=1.0), provider("p2", latency=50))])
    runtime, sim, trace = simulate(doc)
    enact(runtime, sim, "serial", ["root.SC:a", "standby.SC:a#p2"])
    sim.launch_instance()
    sim.run_until(1000)
    assert invoke_times(trace, "standby.SC:a#p2") == [100]
    assert completions(trace) == [150]
    assert sim.completed == 1


def test_reexecute_retries_up_to_cap():
    """A failing service is retried until the cap, then the instance fails."""
    doc = document(svc("a"), [service("a", latency=100, fail=1.0)])
    runtime, sim, trace = simulate(doc)
    enact(runtime, sim, "reexecute", ["root.SC:a"], cap=3)
    sim.launch_instance()
    sim.run_until(5000)
    assert invoke_times(trace, "root.SC:a") == [0, 100, 200]
    assert sim.failed == 1


def test_compression_shortens_transit():
    """Compressed payloads cross a slow link faster, at a CPU and battery cost."""
    _, sim, trace = simulate(TWO_STEP)
    sim.set_bandwidth(1.0)
    sim.launch_instance()
    sim.run_until(5000)
    assert invoke_times(trace, "root.1.SC:b") == [1100]

    runtime, sim, trace = simulate(TWO_STEP)
    enact(runtime, sim, "compress", ["root.0.SC:a", "root.1.SC:b"])
    sim.set_bandwidth(1.0)
    sim.launch_instance()
    sim.run_until(5000)
    ratio, cpu = settings.COMPRESSION_RATIO, settings.COMPRESSION_CPU_MS
    assert invoke_times(trace, "root.1.SC:b") == [100 + round(1000 * ratio) + 2 * cpu]
    assert sim.resources.battery == pytest.approx(2 * settings.COMPRESSION_BATTERY_COST)


QUEUED = document(
    seq(svc("a"), svc("b")),
    [service("a", latency=150, payload=100), service("b", latency=100)],
    scenario={"seed": 1, "horizon_ms": 10000, "events": [
        {"at_ms": 100, "action": "set_bandwidth", "bytes_per_ms": 0},
        {"at_ms": 200, "action": "set_bandwidth", "bytes_per_ms": 2},
    ]},
)


def test_link_down_fails_messages():
    """Without a queue a message crossing a dead link fails."""
    _, sim, trace = simulate(QUEUED)
    sim.launch_instance()
    sim.run_until(5000)
    assert sim.failed == 1
    assert invoke_times(trace, "root.1.SC:b") == []


def test_queue_holds_until_link_returns():
    """A queue holds messages while the link is down and forwards them later."""
    runtime, sim, trace = simulate(QUEUED)
    enact(runtime, sim, "queue", ["root.0.SC:a"])
    sim.launch_instance()
    sim.run_until(180)
    assert sim.held_messages() == 1
    assert sim.resources.memory == pytest.approx(settings.QUEUE_MEMORY_COST)

    sim.run_until(5000)
    assert sim.held_messages() == 0
    assert invoke_times(trace, "root.1.SC:b") == [250]
    assert sim.completed == 1


def test_removed_queue_releases_messages():
    """Messages held by a queue that disappears move on to its old target."""
    runtime, sim, trace = simulate(QUEUED)
    enact(runtime, sim, "queue", ["root.0.SC:a"])
    sim.launch_instance()
    sim.run_until(180)
    original = transform(build(QUEUED)).table
    sim.configure(original)
    assert sim.held_messages() == 0


def test_interceptors_are_transparent():
    """Removing every interceptor leaves the trace unchanged."""
    model = emergency()
    lines = []
    for strip in (False, True):
        trace = TraceLog()
        sim = init_sim(transform(model), model.scenario, trace)
        if strip:
            for connector in sim.table.connectors.values():
                connector.installed_interceptors.clear()
        sim.run_until(sim.horizon_ms)
        sim.drain()
        events = sim.drain_events()
        assert (len(events) == 0) == strip
        lines.append(trace.lines())
    assert lines[0] == lines[1]


def test_interceptor_management():
    """Installing on a missing connector or removing a missing interceptor fails."""
    doc = document(seq(svc("a"), svc("b")), [service("a"), service("b")],
                   requirements=[time_requirement("root", "rt_total", 1000, 2000, "Slow")])
    runtime, sim, _ = simulate(doc)
    spec = next(runtime.interceptors())
    with pytest.raises(NotFoundError):
        sim.install_interceptor(type(spec)("x", "nowhere", spec.checkpoint_id, spec.event_kinds))
    with pytest.raises(NotFoundError):
        sim.uninstall_interceptor("nothing")


def test_uninstalled_entry_produces_orphan():
    """An exit whose entry was not observed is counted as an orphan."""
    doc = document(seq(svc("a"), svc("b")), [service("a"), service("b")],
                   requirements=[time_requirement("root", "rt_total", 1000, 2000, "Slow")])
    runtime, sim, _ = simulate(doc)
    owners = {spec.id: spec.checkpoint_id for spec in runtime.interceptors()}
    hub = MeasurementHub(runtime.checkpoints, owners)

    sim.launch_instance()
    sim.run_until(10)
    sim.uninstall_interceptor("CP:rt_total.before")
    sim.launch_instance()
    sim.run_until(5000)

    measurements = []
    for event in sim.drain_events():
        measurements.extend(hub.feed(event))
    assert [m.value for m in measurements] == [200.0]
    assert hub.orphans == 1


def test_missing_binding_fails_instance():
    """A message with nowhere to go fails its instance with a routing error."""
    runtime, sim, trace = simulate(TWO_STEP)
    table = runtime.table.copy()
    table.outs.pop("root.SeqOut.0")
    sim.configure(table)
    sim.launch_instance()
    sim.run_until(5000)
    assert sim.failed == 1
    reasons = [e.payload["reason"] for e in trace.of_kind(TraceKind.FAIL)]
    assert reasons[0].startswith("routing error:")


@pytest.mark.parametrize("kind,arguments", [
    ("parallel", ["root.SC:a", "standby.SC:a#p2"]),
    ("serial", ["root.SC:a", "standby.SC:a#p2"]),
])
def test_redundant_forks_leave_no_join_state(kind, arguments):
    """Join bookkeeping ends with its instance, also when a slower branch is still in flight."""
    doc = document(svc("a"), [service(
        "a",
        provider("p1", latency=110, fail=0.1),
        provider("p2", latency=125, fail=0.2),
    )])
    runtime, sim, _ = simulate(doc, horizon_ms=1000, seed=5)
    enact(runtime, sim, kind, arguments)
    for _ in range(500):
        sim.launch_instance()
    sim.run_until(100)
    assert sim._joins
    sim.run_until(1000)

    assert sim.completed + sim.failed == 500
    assert sim._joins == {}


def test_drain_releases_join_state():
    """Instances failed by the drain give up their open forks."""
    doc = document(svc("a"), [service("a", provider("p1", latency=3000), provider("p2", latency=5000))])
    runtime, sim, _ = simulate(doc, horizon_ms=1000)
    enact(runtime, sim, "parallel", ["root.SC:a", "standby.SC:a#p2"])
    sim.launch_instance()
    sim.run_until(200)
    assert len(sim._joins) == 1
    sim.drain(grace_ms=0)
    assert sim.failed == 1
    assert sim._joins == {}


def simulated_effect(providers, kind, arguments, n=100_000, seed=2024, **params):
    """Predicted and measured QoS of a one-service workflow after a tactic."""
    doc = document(svc("a"), [service("a", *providers)])
    runtime, sim, trace = simulate(doc, horizon_ms=1000, seed=seed)
    profiles = {c.provider.provider_id: c.provider for c in runtime.components.values()}
    ctx = context_from_runtime(runtime)
    tactic = instantiate(kind, arguments, ctx, params=params or None,
                         alt_qos_of=lambda sc: qos_of_provider(runtime.components[sc].provider))
    predicted = predict_effect(tactic, qos_of_provider(runtime.components["root.SC:a"].provider))
    ConfigurationManager(runtime, ctx, sim, profiles).enact([tactic.batch])

    for _ in range(n):
        sim.launch_instance()
    sim.run_until(100_000)
    assert sim.completed + sim.failed == n

    latencies = completions(trace) + [
        e.payload["latency_ms"] for e in trace.of_kind(TraceKind.FAIL) if "latency_ms" in e.payload
    ]
    spent = sum(profiles[e.payload["provider"]].cost for e in trace.of_kind(TraceKind.INVOKE))
    measured = {
        "availability": sim.completed / n,
        "cost": spent / n,
        "response_time": sum(latencies) / n,
    }
    return predicted, measured


@pytest.mark.slow
@pytest.mark.parametrize("kind,arguments,providers,params", [
    pytest.param("parallel", ["root.SC:a", "standby.SC:a#p2"], [
        provider("p1", latency=110, stddev=10, fail=0.02, cost=1.0),
        provider("p2", latency=160, fail=0.2, cost=2.0),
    ], {}, id="parallel"),
    pytest.param("serial", ["root.SC:a", "standby.SC:a#p2"], [
        provider("p1", latency=100, stddev=10, fail=0.1, cost=1.0),
        provider("p2", latency=150, fail=0.2, cost=2.0),
    ], {}, id="serial"),
    pytest.param("reexecute", ["root.SC:a"], [
        provider("p1", latency=100, stddev=10, fail=0.3, cost=1.0),
    ], {"cap": 3}, id="reexecute"),
    pytest.param("skip", ["root.SC:a"], [
        provider("p1", latency=100, stddev=10, fail=0.3, cost=1.0),
    ], {}, id="skip"),
    pytest.param("replace", ["root.SC:a", "standby.SC:a#p2"], [
        provider("p1", latency=100, fail=0.3, cost=1.0),
        provider("p2", latency=150, stddev=10, fail=0.1, cost=2.0),
    ], {}, id="replace"),
    pytest.param("add", ["root.SC:a", "standby.SC:a#p2"], [
        provider("p1", latency=100, stddev=10, cost=1.0),
        provider("p2", latency=150, fail=0.1, cost=2.0),
    ], {}, id="add"),
])
def test_simulated_effect_matches_prediction(kind, arguments, providers, params):
    """Over 10^5 instances the enacted tactic meets its predicted availability, cost and response time."""
    predicted, measured = simulated_effect(providers, kind, arguments, **params)
    assert measured["availability"] == pytest.approx(predicted.availability, rel=0.02)
    assert measured["cost"] == pytest.approx(predicted.cost, rel=0.02)
    assert measured["response_time"] == pytest.approx(predicted.response_time, rel=0.02)


@pytest.mark.slow
def test_parallel_takes_the_faster_response():
    """Distinct latencies: instances finish with the faster provider."""
    predicted, measured = simulated_effect([
        provider("p1", latency=160, fail=0.01, cost=1.0),
        provider("p2", latency=110, stddev=10, fail=0.01, cost=2.0),
    ], "parallel", ["root.SC:a", "standby.SC:a#p2"])
    assert predicted.response_time == pytest.approx(110)
    assert measured["response_time"] == pytest.approx(110, rel=0.02)


@pytest.mark.slow
def test_parallel_availability_matches_prediction():
    """Redundant providers at 0.9 and 0.8 succeed about 98% of the time."""
    predicted, measured = simulated_effect([
        provider("p1", latency=110, stddev=10, fail=0.1, cost=1.0),
        provider("p2", latency=160, fail=0.2, cost=2.0),
    ], "parallel", ["root.SC:a", "standby.SC:a#p2"])
    assert predicted.availability == pytest.approx(0.98)
    assert measured["availability"] == pytest.approx(0.98, rel=0.02)
    assert measured["cost"] == pytest.approx(3.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
