"""Tests for classification, checkpoints and structural QoS."""

import numpy as np
import pytest

from models.qos import Measurement, QualityLevel, Severity, StructuralQoS
from models.runtime import Checkpoint, EvaluationUnit, InterceptorKind
from models.spec import FuzzyMeasure, MeasurablePropertySpec, ProcessNode, ProviderProfile, PropertyKind
from services.qos import (
    InterceptorEvent,
    badness,
    band_shares,
    bound_profiles,
    classify,
    evaluate,
    ingest,
    monte_carlo_qos,
    qos_of_provider,
    recompute,
    structural_qos,
)
from tests.factories import and_par, build, document, has_choice, loop, opt, random_workflow, sel, seq, service, svc
from utils.errors import MissingLeafValue, OrphanEvent
from utils.expressions import parse_expression

LOWER = FuzzyMeasure(orientation="-", x1=10, x2=30)
UPPER = FuzzyMeasure(orientation="+", x1=0.96, x2=0.99)


def node(data) -> ProcessNode:
    return ProcessNode.model_validate(data)


def qos(rt=0.0, cost=0.0, a=1.0):
    return StructuralQoS(response_time=rt, cost=cost, availability=a, reliability=a)


def unit(fuzzy, window_ms=None) -> EvaluationUnit:
    if window_ms is not None:
        fuzzy = FuzzyMeasure(orientation=fuzzy.orientation, x1=fuzzy.x1, x2=fuzzy.x2,
                             interval={"window_ms": window_ms})
    return EvaluationUnit("EU:q", "q", fuzzy, "Quality dropped", "root")


# Classification ------------------------------------------------------------------


@pytest.mark.parametrize("value,level", [
    (9.999, QualityLevel.ACCEPTABLE),
    (10, QualityLevel.TOLERABLE),
    (20, QualityLevel.TOLERABLE),
    (30, QualityLevel.TOLERABLE),
    (30.001, QualityLevel.UNACCEPTABLE),
])
def test_classify_lower_is_better(value, level):
    """Both boundaries of a '-' measure belong to the tolerable band."""
    assert classify(LOWER, value) == level


@pytest.mark.parametrize("value,level", [
    (0.995, QualityLevel.ACCEPTABLE),
    (0.99, QualityLevel.TOLERABLE),
    (0.97, QualityLevel.TOLERABLE),
    (0.96, QualityLevel.TOLERABLE),
    (0.959, QualityLevel.UNACCEPTABLE),
])
def test_classify_higher_is_better(value, level):
    """A '+' measure mirrors the bands."""
    assert classify(UPPER, value) == level


def test_badness():
    """Badness rises linearly across the tolerable band."""
    assert badness(LOWER, 5) == 0.0
    assert badness(LOWER, 20) == pytest.approx(0.5)
    assert badness(LOWER, 40) == 1.0
    assert badness(UPPER, 0.975) == pytest.approx(0.5)
    assert badness(UPPER, 0.5) == 1.0

    # Degenerate band
    step = FuzzyMeasure(orientation="-", x1=0.5, x2=0.5)
    assert badness(step, 0.0) == 0.0
    assert badness(step, 0.5) == 0.5
    assert badness(step, 1.0) == 1.0


def test_evaluate_raises_soft_then_hard():
    """Entering tolerable raises a soft trigger, entering unacceptable a hard one."""
    u = unit(LOWER)
    assert evaluate(u, Measurement("q", 5, 1, 100)) is None
    soft = evaluate(u, Measurement("q", 20, 2, 200))
    assert soft.severity == Severity.SOFT
    assert soft.trigger_name == "Quality dropped"
    assert soft.source_qr == "q"

    # Staying in a band raises nothing
    assert evaluate(u, Measurement("q", 25, 3, 300)) is None

    hard = evaluate(u, Measurement("q", 50, 4, 400))
    assert hard.severity == Severity.HARD

    # Improving raises nothing but is recorded
    assert evaluate(u, Measurement("q", 1, 5, 500)) is None
    assert [level for _, level in u.history] == [
        QualityLevel.TOLERABLE, QualityLevel.UNACCEPTABLE, QualityLevel.ACCEPTABLE,
    ]


def test_evaluate_windowed_mean():
    """Windowed units classify the mean of the samples inside the window."""
    u = unit(LOWER, window_ms=1000)
    evaluate(u, Measurement("q", 0, 1, 0))
    evaluate(u, Measurement("q", 40, 2, 500))
    assert u.last_value == pytest.approx(20)
    assert u.last_level == QualityLevel.TOLERABLE

    # The first sample leaves the window
    evaluate(u, Measurement("q", 40, 3, 1200))
    assert u.last_value == pytest.approx(40)
    assert u.last_level == QualityLevel.UNACCEPTABLE


def test_band_shares():
    """Band shares cover the whole run and start acceptable."""
    history = [(250, QualityLevel.TOLERABLE), (750, QualityLevel.ACCEPTABLE)]
    shares = band_shares(history, 1000)
    assert shares == {"acceptable": 50.0, "tolerable": 50.0, "unacceptable": 0.0}
    assert band_shares([], 0)["acceptable"] == 100.0


# Checkpoints ---------------------------------------------------------------------


def checkpoint(kind: PropertyKind, **spec) -> Checkpoint:
    prop = MeasurablePropertySpec(kind=kind, name="p", **spec)
    return Checkpoint("CP:p", "p", kind, prop, "root.PB:root")


def event(kind: InterceptorKind, instance: int, t: int, **payload) -> InterceptorEvent:
    return InterceptorEvent("CP:p.x", "con", kind, instance, t, payload)


def test_time_checkpoint():
    """Time is the difference between block exit and entry of the same instance."""
    cp = checkpoint(PropertyKind.TIME)
    assert ingest(cp, event(InterceptorKind.BLOCK_ENTRY, 1, 100)) is None
    assert ingest(cp, event(InterceptorKind.BLOCK_ENTRY, 2, 150)) is None
    assert ingest(cp, event(InterceptorKind.BLOCK_EXIT, 2, 400)).value == 250
    assert ingest(cp, event(InterceptorKind.BLOCK_EXIT, 1, 600)).value == 500

    with pytest.raises(OrphanEvent):
        ingest(cp, event(InterceptorKind.BLOCK_EXIT, 9, 700))


def test_failure_checkpoint():
    """A failure inside the block measures 1, a clean exit 0."""
    cp = checkpoint(PropertyKind.FAILURE)
    ingest(cp, event(InterceptorKind.BLOCK_ENTRY, 1, 0))
    assert ingest(cp, event(InterceptorKind.BLOCK_EXIT, 1, 10, failed=False)).value == 0.0

    ingest(cp, event(InterceptorKind.BLOCK_ENTRY, 2, 20))
    assert ingest(cp, event(InterceptorKind.BLOCK_EXIT, 2, 30, failed=True)) is None
    assert ingest(cp, event(InterceptorKind.FAILURE, 2, 30, failed=True)).value == 1.0


def test_failed_upstream_is_not_measured():
    """A message that entered the block already failed produces no measurement."""
    cp = checkpoint(PropertyKind.FAILURE)
    ingest(cp, event(InterceptorKind.BLOCK_ENTRY, 1, 0, failed=True))
    assert ingest(cp, event(InterceptorKind.BLOCK_EXIT, 1, 5, failed=True)) is None
    assert ingest(cp, event(InterceptorKind.FAILURE, 1, 5, failed=True)) is None
    assert cp.pending == {} and cp.inherited == set()


def test_constraint_checkpoint():
    """Constraint checks measure 0 when satisfied and 1 when violated."""
    cp = checkpoint(PropertyKind.CONSTRAINT, expression="payload_bytes <= 100")
    cp.expression = parse_expression("payload_bytes <= 100")
    assert ingest(cp, event(InterceptorKind.CONSTRAINT_CHECK, 1, 0, payload_bytes=50)).value == 0.0
    assert ingest(cp, event(InterceptorKind.CONSTRAINT_CHECK, 2, 0, payload_bytes=500)).value == 1.0


def test_aggregated_ratio_over_window():
    """Failures {0, 0, 1, 0} give a ratio of successes of 0.75."""
    cp = checkpoint(PropertyKind.AGGREGATED, function="ratio", base="f", window_ms=1000)
    cp.window_ms = 1000
    values = []
    for i, failed in enumerate([0, 0, 1, 0]):
        values.append(recompute(cp, Measurement("f", float(failed), i, 100 * i)).value)
    assert values[-1] == pytest.approx(0.75)

    # Old samples slide out of the window
    assert recompute(cp, Measurement("f", 0.0, 9, 1250)).value == pytest.approx(1.0)


# Structural QoS ------------------------------------------------------------------


LEAVES = {
    "a": qos(rt=100, cost=1.0, a=0.9),
    "b": qos(rt=200, cost=2.0, a=0.8),
}


def test_seq_multiplies_availability():
    """Sequences add times and costs and multiply availabilities."""
    result = structural_qos(node(seq(svc("a"), svc("b"))), LEAVES)
    assert result.availability == pytest.approx(0.72)
    assert result.response_time == pytest.approx(300)
    assert result.cost == pytest.approx(3.0)


def test_loop_powers_reliability():
    """A loop of three over R=0.9 yields 0.729."""
    result = structural_qos(node(loop(3, svc("a"))), LEAVES)
    assert result.reliability == pytest.approx(0.729)
    assert result.response_time == pytest.approx(300)


def test_sel_opt_and_par():
    """Selections weight branches, optional nodes weight nothing, and_par takes the slowest."""
    chosen = structural_qos(node(sel([0.25, 0.75], svc("a"), svc("b"))), LEAVES)
    assert chosen.response_time == pytest.approx(175)
    assert chosen.availability == pytest.approx(0.825)

    optional = structural_qos(node(opt(svc("a"), p=0.4)), LEAVES)
    assert optional.response_time == pytest.approx(40)
    assert optional.availability == pytest.approx(0.96)

    parallel = structural_qos(node(and_par(svc("a"), svc("b"))), LEAVES)
    assert parallel.response_time == pytest.approx(200)
    assert parallel.cost == pytest.approx(3.0)
    assert parallel.availability == pytest.approx(0.72)


def test_overrides_replace_subtrees():
    """An override replaces the whole subtree at its path."""
    tree = node(seq(svc("a"), svc("b")))
    result = structural_qos(tree, LEAVES, overrides={"root.1": qos(rt=0, cost=0, a=1.0)})
    assert result.response_time == pytest.approx(100)
    assert result.availability == pytest.approx(0.9)


def test_missing_leaf_value():
    """A service without a value is reported."""
    with pytest.raises(MissingLeafValue) as info:
        structural_qos(node(seq(svc("a"), svc("zzz"))), LEAVES)
    assert info.value.element == "zzz"


def test_monte_carlo_exact_for_deterministic_tree():
    """Without choices and with stddev 0, time and cost are exact."""
    model = build(document(
        seq(svc("a"), and_par(svc("b"), loop(2, svc("c")))),
        [
            service("a", latency=100, fail=0.1, cost=1.0),
            service("b", latency=300, fail=0.0, cost=2.0),
            service("c", latency=50, fail=0.05, cost=0.5),
        ],
    ))
    rng = np.random.default_rng(3)
    sampled = monte_carlo_qos(model.workflow, bound_profiles(model), 20000, rng)
    analytic = structural_qos(model.workflow, {
        "a": qos(100, 1.0, 0.9), "b": qos(300, 2.0, 1.0), "c": qos(50, 0.5, 0.95),
    })
    assert sampled.response_time == pytest.approx(analytic.response_time)
    assert sampled.cost == pytest.approx(analytic.cost)
    assert sampled.availability == pytest.approx(analytic.availability, abs=0.01)


@pytest.mark.slow
def test_structural_qos_matches_monte_carlo():
    """Random workflows agree with 10^5 simulated executions."""
    rng = np.random.default_rng(2024)
    for _ in range(50):
        workflow, services = random_workflow(rng, depth=3, max_services=8)
        model = build(document(workflow, services))
        leaves = {s["name"]: qos(
            rt=s["providers"][0]["latency_mean_ms"],
            cost=s["providers"][0]["cost"],
            a=1.0 - s["providers"][0]["failure_probability"],
        ) for s in services}
        analytic = structural_qos(model.workflow, leaves)
        sampled = monte_carlo_qos(model.workflow, bound_profiles(model), 100_000, rng)

        assert sampled.availability == pytest.approx(analytic.availability, rel=0.01, abs=0.005)
        assert sampled.reliability == pytest.approx(analytic.reliability, rel=0.01, abs=0.005)
        assert sampled.response_time == pytest.approx(analytic.response_time, rel=0.02, abs=2.0)
        if has_choice(workflow):
            assert sampled.cost == pytest.approx(analytic.cost, rel=0.02, abs=0.02)
        else:
            assert sampled.cost == pytest.approx(analytic.cost, rel=1e-9)


def test_provider_without_latency_has_no_leaf_value():
    """Only providers that declare a latency contribute leaf values."""
    assert qos_of_provider(ProviderProfile(provider_id="x")) is None
    value = qos_of_provider(ProviderProfile(provider_id="y", latency_mean_ms=10, failure_probability=0.25))
    assert value.availability == pytest.approx(0.75)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
