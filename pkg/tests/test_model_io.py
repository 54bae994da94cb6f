"""Tests for reading, writing and validating model documents."""

import json

import numpy as np
import pytest

from models.spec import NodeKind
from services.model_io import (
    argument_target,
    load_bundled_model,
    parse_model,
    resolve_label,
    serialize_model,
)
from tests.factories import build, document, emergency_doc, random_workflow
from utils.errors import ModelSyntaxError, ModelValidationError, NotFoundError


def problems_of(doc):
    with pytest.raises(ModelValidationError) as info:
        build(doc)
    return info.value.problems


def test_bundled_model_loads():
    """The emergency-call document parses and keeps its structure."""
    model = load_bundled_model()
    assert model.workflow.kind == NodeKind.SEQ
    assert len(model.workflow.children) == 9
    assert len(model.quality_requirements) == 6
    assert len(model.adaptation_plans) == 8
    assert model.scenario.seed == 42
    assert model.service("display_on_map").providers[1].provider_id == "google_map"


def test_serialize_is_a_fixpoint():
    """Serializing and parsing the bundled model gives the same model and text."""
    model = load_bundled_model()
    text = serialize_model(model)
    again = parse_model(text)
    assert again == model
    assert serialize_model(again) == text


@pytest.mark.slow
def test_random_models_survive_serialization():
    """Random workflows parse back to equal models."""
    rng = np.random.default_rng(7)
    for _ in range(1000):
        workflow, services = random_workflow(rng, depth=4, max_services=10, stddev=True)
        model = build(document(workflow, services))
        assert parse_model(serialize_model(model)) == model


def test_syntax_error_has_position():
    """Malformed JSON reports line and column."""
    with pytest.raises(ModelSyntaxError) as info:
        parse_model('{"workflow": \n  [1, 2,')
    assert info.value.line == 2
    assert info.value.column > 0
    assert str(info.value).startswith("line 2, column")


def test_document_must_be_an_object():
    """A top-level array is rejected."""
    with pytest.raises(ModelValidationError) as info:
        parse_model("[]")
    assert info.value.element == "document"


def test_unknown_field_is_rejected():
    """Unknown fields name their location."""
    doc = emergency_doc()
    doc["workflow"]["colour"] = "red"
    with pytest.raises(ModelValidationError) as info:
        build(doc)
    assert info.value.element.startswith("workflow")


def test_schema_errors_are_all_reported():
    """Every field-level mistake shows up in one pass."""
    doc = emergency_doc()
    doc["workflow"]["colour"] = "red"
    doc["services"][0]["providers"][0]["cost"] = "cheap"
    elements = [element for element, _ in problems_of(doc)]
    assert any(element.startswith("workflow") for element in elements)
    assert any(element.endswith("cost") for element in elements)


def test_repeated_label():
    """Labels are unique."""
    doc = emergency_doc()
    doc["workflow"]["children"][3]["label"] = "notify"
    assert ("notify", "label 'notify' is used more than once") in problems_of(doc)


def test_sel_probabilities_must_sum_to_one():
    """Selection probabilities form a distribution."""
    doc = emergency_doc()
    doc["workflow"]["children"][4]["probabilities"] = [0.5, 0.6]
    problems = problems_of(doc)
    assert problems[0][0] == "select_fire_station"
    assert problems[0][1].startswith("sel probabilities must lie in [0, 1] and sum to 1")


def test_negative_latency():
    """Provider latencies are not negative."""
    doc = emergency_doc()
    doc["services"][0]["providers"][0]["latency_mean_ms"] = -1
    element, message = problems_of(doc)[0]
    assert element == "call_switch"
    assert message.startswith("latency_mean_ms must not be negative")


def test_missing_target_label():
    """Requirements target existing labels."""
    doc = emergency_doc()
    doc["quality_requirements"][1]["target"] = "nowhere"
    assert ("rt_geo", "target label 'nowhere' does not exist") in problems_of(doc)


def test_property_cycle():
    """Derived properties must not depend on themselves."""
    doc = emergency_doc()
    doc["quality_requirements"].append({
        "target": "root",
        "property": {
            "kind": "derived",
            "name": "x",
            "function": "sum",
            "inputs": [{"kind": "derived", "name": "y", "function": "sum", "inputs": ["x"]}],
        },
        "fuzzy": {"orientation": "-", "x1": 1, "x2": 2},
        "trigger": "Emergency response is slow",
    })
    problems = problems_of(doc)
    assert any(message.startswith("property dependencies form a cycle") for _, message in problems)


def test_tactic_arity():
    """Plans call tactics with the declared number of arguments."""
    doc = emergency_doc()
    doc["adaptation_plans"][1]["flow"][0]["args"] = ["identify_call_number", "extra"]
    assert (
        "plan 2 (Automatic call number detection failed)",
        "skip takes 1 arguments, got 2",
    ) in problems_of(doc)


def test_unraised_trigger():
    """Every plan answers a trigger something can raise."""
    doc = emergency_doc()
    doc["adaptation_plans"][5]["trigger"] = "Nobody raises this"
    assert (
        "plan 6 (Nobody raises this)",
        "trigger 'Nobody raises this' is never raised",
    ) in problems_of(doc)


def test_all_problems_are_listed():
    """Validation collects every problem, not only the first."""
    doc = emergency_doc()
    doc["workflow"]["children"][3]["label"] = "notify"
    doc["quality_requirements"][1]["target"] = "nowhere"
    with pytest.raises(ModelValidationError) as info:
        build(doc)
    assert len(info.value.problems) >= 2
    assert info.value.element == info.value.problems[0][0]


def test_unordered_scenario_events():
    """Scenario events are ordered by time."""
    doc = emergency_doc()
    doc["scenario"]["events"].append({"at_ms": 10, "action": "set_bandwidth", "bytes_per_ms": 5})
    problems = problems_of(doc)
    assert any(message == "events must be ordered by at_ms" for _, message in problems)


def test_resolve_label():
    """Labels resolve to nodes; root is always available."""
    model = load_bundled_model()
    assert resolve_label(model, "root") is model.workflow
    assert resolve_label(model, "notify").kind == NodeKind.AND_PAR
    with pytest.raises(NotFoundError):
        resolve_label(model, "nowhere")


def test_argument_target():
    """Tactic arguments resolve by role."""
    model = load_bundled_model()
    assert argument_target(model, "component", "identify_call_number") == ("service_node", "root.1")
    assert argument_target(model, "component", "find_position_by_id") == ("service_node", "root.2.0")
    assert argument_target(model, "node", "vehicle_link") == ("block", "root.6.0.0")
    assert argument_target(model, "component", "vehicle_link") is None
    assert argument_target(model, "service", "google_map") == ("provider", "google_map")
    assert argument_target(model, "service", "find_position_on_map") == ("service", "find_position_on_map")
    assert argument_target(model, "service", "nothing") is None
    assert argument_target(model, "modifier", "summary") == ("value", "summary")


def test_document_without_scenario():
    """The scenario section is optional."""
    doc = emergency_doc()
    del doc["scenario"]
    assert parse_model(json.dumps(doc)).scenario is None


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
