"""JSON-lines trace stream."""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from models.trace import REQUIRED_FIELDS, TraceEvent, TraceKind


class TraceLog:
    """Append-only list of trace events with a JSON-lines rendering."""

    def __init__(self):
        self.events: List[TraceEvent] = []
        self._last_t = 0

    def record(self, t: int, kind: TraceKind, **payload: Any) -> TraceEvent:
        """
        Append an event.

        Args:
            t: Simulated time in ms; never earlier than the previous event
            kind: Event kind
            **payload: Kind-specific fields

        Returns:
            The recorded event
        """
        if t < self._last_t:
            raise ValueError(f"trace time went backwards: {t} < {self._last_t}")
        self._last_t = t
        event = TraceEvent(t=int(t), kind=kind, payload=payload)
        self.events.append(event)
        return event

    def of_kind(self, *kinds: TraceKind) -> List[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]

    def lines(self, exclude: Iterable[TraceKind] = ()) -> List[str]:
        skipped = set(exclude)
        return [
            json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False)
            for e in self.events
            if e.kind not in skipped
        ]

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line in self.lines():
                f.write(line + "\n")

    def __len__(self) -> int:
        return len(self.events)


def validate_trace_line(line: Union[str, Dict[str, Any]]) -> Optional[str]:
    """
    Check one trace line against the event schema.

    Args:
        line: JSON text or an already decoded object

    Returns:
        None when valid, otherwise a description of the problem
    """
    data = json.loads(line) if isinstance(line, str) else line
    if not isinstance(data, dict):
        return "trace line is not an object"
    if not isinstance(data.get("t"), int) or data["t"] < 0:
        return "missing or negative 't'"
    try:
        kind = TraceKind(data.get("kind"))
    except ValueError:
        return f"unknown kind {data.get('kind')!r}"
    missing = [name for name in REQUIRED_FIELDS[kind] if name not in data]
    if missing:
        return f"{kind.value} event lacks {', '.join(missing)}"
    return None
