"""Event log: one append-only record stream per run, NDJSON on disk.

Records carry logical time (exact), optional wall time, a kind, and a
JSON-safe detail map.  The logical/physical equivalence check projects a log
onto its semantic kinds; infrastructure records (round timings, failures)
are physical-only and excluded from the projection.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable

from realtick.core import rat_str

SEMANTIC_KINDS = ("dispatch", "request", "pace", "pump-cmd")
KINDS = SEMANTIC_KINDS + ("interrupt", "round-timing", "deadline-miss", "client-failure")


def json_value(v: Any) -> Any:
    """A record detail value as it appears on the wire: exact rationals
    become ints when integral and "n/d" strings otherwise."""
    if isinstance(v, bool) or v is None or isinstance(v, (str, int, float)):
        return v
    if isinstance(v, Fraction):
        return v.numerator if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(v, (list, tuple)):
        return [json_value(x) for x in v]
    if isinstance(v, dict):
        return {k: json_value(x) for k, x in v.items()}
    return repr(v)


@dataclass(frozen=True)
class EventRecord:
    seq: int
    ltime: Fraction
    wall_ms: Fraction | None
    kind: str
    detail: dict

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "ltime": rat_str(self.ltime),
            "wall_ms": None if self.wall_ms is None else rat_str(self.wall_ms),
            "kind": self.kind,
            "detail": json_value(self.detail),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EventRecord":
        return cls(
            seq=d["seq"],
            ltime=Fraction(d["ltime"]),
            wall_ms=None if d.get("wall_ms") is None else Fraction(d["wall_ms"]),
            kind=d["kind"],
            detail=d.get("detail", {}),
        )


class EventLog:
    """Thread-safe append-only record list with optional NDJSON sink."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[EventRecord] = []
        self._lock = threading.Lock()
        self._file = open(path, "w") if path else None
        self._listeners: list[Callable[[EventRecord], None]] = []

    def append(
        self,
        kind: str,
        detail: dict,
        ltime: Fraction,
        wall_ms: Fraction | None = None,
    ) -> EventRecord:
        with self._lock:
            rec = EventRecord(len(self.records), Fraction(ltime), wall_ms, kind, detail)
            self.records.append(rec)
            if self._file:
                self._file.write(json.dumps(rec.to_json()) + "\n")
                self._file.flush()
            listeners = list(self._listeners)
        for listener in listeners:
            listener(rec)
        return rec

    def subscribe(self, listener: Callable[[EventRecord], None]) -> None:
        with self._lock:
            self._listeners.append(listener)

    def unsubscribe(self, listener: Callable[[EventRecord], None]) -> None:
        with self._lock:
            if listener in self._listeners:
                self._listeners.remove(listener)

    def since(self, seq: int) -> list[EventRecord]:
        with self._lock:
            return self.records[seq:]

    def close(self) -> None:
        with self._lock:
            if self._file:
                self._file.close()
                self._file = None

    def projection(
        self, kinds: Iterable[str] = SEMANTIC_KINDS
    ) -> list[tuple[str, str, str]]:
        """(ltime, kind, canonical-detail) triples for equivalence checks."""
        wanted = set(kinds)
        return [
            (
                rat_str(r.ltime),
                r.kind,
                json.dumps(json_value(r.detail), sort_keys=True),
            )
            for r in self.records
            if r.kind in wanted
        ]

    def write_ndjson(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec.to_json()) + "\n")

    @classmethod
    def read_ndjson(cls, path: str | Path) -> "EventLog":
        log = cls()
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    log.records.append(EventRecord.from_json(json.loads(line)))
        return log
