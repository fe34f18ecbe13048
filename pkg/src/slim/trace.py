"""Line-delimited JSON event traces shared by the simulators and the energy
accountant. ``bytes`` carries the event's quantity: bytes moved for transfer
events, operation counts for compute events."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path


@dataclass(frozen=True)
class TraceEvent:
    time_ns: int
    unit: str
    event: str
    bytes: float


def write_ldjson(events: list[TraceEvent], path) -> None:
    with open(Path(path), "w") as fh:
        for ev in events:
            fh.write(json.dumps(asdict(ev), sort_keys=True) + "\n")


def read_ldjson(path) -> list[TraceEvent]:
    events = []
    with open(Path(path)) as fh:
        for line in fh:
            if line.strip():
                events.append(TraceEvent(**json.loads(line)))
    return events
