"""Tests for the context model and entailment."""

import numpy as np
import pytest

from models.context import Assumption, Bind, IsComponent, PropertyValue, QualityOf
from models.patterns import StatePattern, Var, bind, component, quality
from models.qos import QualityLevel
from services.context_store import ContextModel, context_from_runtime, entails, enumerate_models
from services.tactics import default_library
from services.transform import transform
from tests.factories import emergency, random_context
from utils.errors import BindingTypeError, NotFoundError


def test_single_valued_facts_replace():
    """Property values, quality levels and assumptions keep one current value."""
    ctx = ContextModel()
    ctx.assert_fact(PropertyValue("rt", 10.0))
    ctx.assert_fact(PropertyValue("rt", 20.0))
    assert ctx.value("rt") == 20.0
    assert len([f for f in ctx.facts if isinstance(f, PropertyValue)]) == 1

    ctx.assert_fact(QualityOf("rt", QualityLevel.TOLERABLE))
    assert ctx.quality("rt") == QualityLevel.TOLERABLE

    ctx.assert_fact(Assumption("Map service is available", True))
    assert ctx.assumption("Map service is available")
    ctx.assert_fact(Assumption("Map service is available", False))
    assert not ctx.assumption("Map service is available")


def test_closed_world():
    """Absent facts are false."""
    ctx = ContextModel()
    assert not ctx.assumption("Human operator is available")
    assert ctx.value("nothing") is None
    assert ctx.quality("nothing") is None


def test_component_to_component_binding_is_rejected():
    """Components only bind to connectors."""
    ctx = ContextModel([IsComponent("a"), IsComponent("b")])
    with pytest.raises(BindingTypeError):
        ctx.assert_fact(Bind("a", "b"))


def test_unknown_node_bindings():
    """Binding queries on unknown nodes raise NotFoundError."""
    ctx = ContextModel()
    with pytest.raises(NotFoundError):
        ctx.in_bindings("ghost")
    with pytest.raises(NotFoundError):
        ctx.out_bindings("ghost")


def test_revision_counts_batches():
    """A batch advances the revision once; retracting an absent fact does nothing."""
    ctx = ContextModel()
    start = ctx.revision
    with ctx.batch():
        ctx.assert_fact(PropertyValue("a", 1.0))
        ctx.assert_fact(PropertyValue("b", 2.0))
    assert ctx.revision == start + 1
    ctx.assert_fact(PropertyValue("c", 3.0))
    assert ctx.revision == start + 2
    ctx.retract_fact(PropertyValue("zzz", 0.0))
    assert ctx.revision == start + 2


def test_copy_is_independent():
    """Copies do not share facts."""
    ctx = ContextModel([PropertyValue("a", 1.0)])
    clone = ctx.copy()
    clone.assert_fact(PropertyValue("a", 2.0))
    assert ctx.value("a") == 1.0


def test_context_from_runtime():
    """The initial context mirrors the runtime model."""
    runtime = transform(emergency())
    ctx = context_from_runtime(runtime, {"Map service is available": True})
    assert ctx.is_component("root.1.SC:identify_call_number")
    assert ctx.is_connector("root.1.BlockStart")
    assert ctx.component_type("root.1.SC:identify_call_number") == "identify_call_number"
    assert ctx.out_bindings("root.1.BlockStart") == ["root.1.SC:identify_call_number"]
    assert ctx.assumption("Map service is available")
    assert len([f for f in ctx.facts if isinstance(f, Bind)]) == len(runtime.bindings)


def test_entails_simple_pattern():
    """Witnesses bind existential variables."""
    ctx = ContextModel([IsComponent("a"), IsComponent("b")])
    x = Var("X")
    assert entails(ctx, StatePattern(atoms=(component(x),))).witness == {"X": "a"}
    assert entails(ctx, StatePattern(atoms=(component(x),)), {"X": "b"}).holds
    assert not entails(ctx, StatePattern(atoms=(component("c"),))).holds


def test_entails_reports_failed_conjunct():
    """The first unsatisfiable conjunct is named."""
    ctx = ContextModel([IsComponent("a")])
    pattern = StatePattern(atoms=(component(Var("X")), quality("rt", "acceptable")))
    result = entails(ctx, pattern)
    assert not result.holds
    assert result.failed == "quality('rt', 'acceptable')"


@pytest.mark.slow
def test_entails_agrees_with_enumeration():
    """Entailment matches exhaustive enumeration on random contexts."""
    rng = np.random.default_rng(11)
    templates = list(default_library())
    for _ in range(200):
        ctx = random_context(rng, max_components=5, max_connectors=6)
        template = templates[int(rng.integers(0, len(templates)))]
        pattern = template.precondition.conjoin(template.pre_state)
        models = enumerate_models(ctx, pattern)
        result = entails(ctx, pattern)
        assert result.holds == bool(models), template.kind
        if models:
            assert result.witness == models[0], template.kind


def test_entails_with_fixed_bindings_agrees():
    """Fixed bindings restrict both procedures the same way."""
    rng = np.random.default_rng(5)
    ctx = random_context(rng)
    src, dst = Var("S", "connector"), Var("T")
    pattern = StatePattern(atoms=(bind(src, dst),))
    for con in ctx.connectors():
        models = enumerate_models(ctx, pattern, {"S": con})
        result = entails(ctx, pattern, {"S": con})
        assert result.holds == bool(models)
        if models:
            assert result.witness == models[0]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
