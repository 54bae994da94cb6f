"""Tests for the trace stream."""

import json

import pytest

from models.trace import TraceKind
from tasks.mape_loop import run_scenario
from tests.factories import emergency
from utils.tracing import TraceLog, validate_trace_line


def test_record_and_filter():
    trace = TraceLog()
    trace.record(0, TraceKind.INVOKE, instance=1, component="c", provider="p")
    trace.record(10, TraceKind.COMPLETE, instance=1, latency_ms=10)
    assert len(trace) == 2
    assert [e.t for e in trace.of_kind(TraceKind.COMPLETE)] == [10]
    assert trace.lines(exclude=[TraceKind.INVOKE]) == ['{"instance": 1, "kind": "complete", "latency_ms": 10, "t": 10}']


def test_time_never_goes_backwards():
    trace = TraceLog()
    trace.record(5, TraceKind.COMPLETE, instance=1)
    trace.record(5, TraceKind.COMPLETE, instance=2)
    with pytest.raises(ValueError):
        trace.record(4, TraceKind.COMPLETE, instance=3)


@pytest.mark.parametrize("line,problem", [
    ('{"t": 0, "kind": "complete", "instance": 1}', None),
    ("[]", "trace line is not an object"),
    ('{"t": -1, "kind": "complete", "instance": 1}', "missing or negative 't'"),
    ('{"t": 0, "kind": "teleport"}', "unknown kind 'teleport'"),
    ('{"t": 0, "kind": "invoke", "instance": 1}', "invoke event lacks component, provider"),
])
def test_validate_trace_line(line, problem):
    assert validate_trace_line(line) == problem


def test_written_trace_is_valid(tmp_path):
    """Every line of a full run follows the schema, in time order."""
    _, trace, _ = run_scenario(emergency())
    path = tmp_path / "trace.jsonl"
    trace.write(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(trace)
    times = [json.loads(line)["t"] for line in lines]
    assert times == sorted(times)
    assert all(validate_trace_line(line) is None for line in lines)
    kinds = {json.loads(line)["kind"] for line in lines}
    assert {"invoke", "complete", "fail", "measure", "trigger", "tactic_applied"} <= kinds


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
