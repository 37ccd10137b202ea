"""Request-log parsing and per-client popularity pattern vectors.

Log lines look like ``client,date,obj;obj;obj,ready_time,deadline``.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np


class LogParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class RequestLogRecord:
    client_id: int
    date: dt.date
    requested_objects: tuple[int, ...]
    ready_time: float
    deadline: float
    lineno: int = 0


@dataclass
class PatternVector:
    client_id: int
    session_id: int
    values: np.ndarray

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "session_id": self.session_id, "values": self.values.tolist()}


def _number(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not math.isfinite(value):
            raise
        return value


def parse_line(line: str, lineno: int = 0, catalog: Optional[int] = None) -> RequestLogRecord:
    fields = line.rstrip("\r\n").split(",")
    if len(fields) != 5:
        raise LogParseError(lineno, f"expected 5 comma-separated fields, got {len(fields)}")
    client, date, objects, ready, deadline = fields
    try:
        client_id = int(client)
        day = dt.date.fromisoformat(date.strip())
        ready_time = _number(ready)
        dl = _number(deadline)
    except ValueError as exc:
        raise LogParseError(lineno, str(exc)) from None
    if not objects.strip():
        raise LogParseError(lineno, "empty object list")
    try:
        objs = tuple(int(o) for o in objects.split(";"))
    except ValueError as exc:
        raise LogParseError(lineno, f"bad object id: {exc}") from None
    if client_id < 0:
        raise LogParseError(lineno, "negative client id")
    if any(o < 0 or (catalog is not None and o >= catalog) for o in objs):
        raise LogParseError(lineno, f"object id outside catalog of size {catalog}")
    if dl < ready_time:
        raise LogParseError(lineno, f"deadline {dl} precedes ready time {ready_time}")
    return RequestLogRecord(client_id, day, objs, ready_time, dl, lineno)


def parse_log(source: TextIO | Iterable[str], catalog: Optional[int] = None) -> list[RequestLogRecord]:
    """Parse a request log; blank lines and ``#`` comments are skipped."""
    records = []
    for lineno, line in enumerate(source, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        records.append(parse_line(line, lineno, catalog))
    return records


def format_record(rec: RequestLogRecord) -> str:
    objs = ";".join(str(o) for o in rec.requested_objects)
    return f"{rec.client_id},{rec.date.isoformat()},{objs},{rec.ready_time!r},{rec.deadline!r}"


def format_log(records: Iterable[RequestLogRecord]) -> str:
    return "".join(format_record(r) + "\n" for r in records)


def reference_counts(
    records: Iterable[RequestLogRecord],
    clients: int,
    catalog: int,
    session: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """Count object references per client, optionally inside ``[start, end)``."""
    counts = np.zeros((clients, catalog), dtype=np.int64)
    for rec in records:
        if session is not None and not session[0] <= rec.ready_time < session[1]:
            continue
        if not 0 <= rec.client_id < clients:
            raise ValueError(f"client id {rec.client_id} outside [0, {clients})")
        for obj in rec.requested_objects:
            if not 0 <= obj < catalog:
                raise ValueError(f"object id {obj} outside [0, {catalog})")
            counts[rec.client_id, obj] += 1
    return counts


def popularity(counts) -> np.ndarray:
    """Row-wise min-max scaling to [0, 1]; constant rows become zeros."""
    counts = np.asarray(counts, dtype=float)
    lo = counts.min(axis=-1, keepdims=True)
    span = counts.max(axis=-1, keepdims=True) - lo
    out = np.zeros_like(counts)
    np.divide(counts - lo, span, out=out, where=span > 0)
    return np.clip(out, 0.0, 1.0)


def normalize_popularity(counts, session_id: int = 0) -> list[PatternVector]:
    """One pattern vector per client row that has at least one reference."""
    counts = np.asarray(counts)
    delta = popularity(counts)
    return [
        PatternVector(client, session_id, delta[client])
        for client in range(counts.shape[0])
        if counts[client].any()
    ]


def build_sessions(records: Sequence[RequestLogRecord], window: float) -> dict[tuple[int, int], list[RequestLogRecord]]:
    """Group records by client and half-open ready-time window ``[k*w, (k+1)*w)``."""
    if window <= 0:
        raise ValueError("session window must be positive")
    groups: dict[tuple[int, int], list[RequestLogRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.client_id, int(rec.ready_time // window))].append(rec)
    return dict(sorted(groups.items()))


def session_patterns(records: Sequence[RequestLogRecord], clients: int, catalog: int, window: float) -> list[PatternVector]:
    """Pattern vectors for every (session, client) pair, session-major."""
    groups = build_sessions(records, window)
    out = []
    for session in sorted({s for _, s in groups}):
        counts = np.zeros((clients, catalog), dtype=np.int64)
        for (client, s), recs in groups.items():
            if s == session:
                counts[client] = reference_counts(recs, clients, catalog)[client]
        out.extend(normalize_popularity(counts, session))
    return out


def dump_patterns(patterns: Iterable[PatternVector], fh: TextIO) -> None:
    json.dump({"patterns": [p.to_dict() for p in patterns]}, fh)
    fh.write("\n")


def load_patterns(fh: TextIO) -> list[PatternVector]:
    doc = json.load(fh)
    return [
        PatternVector(int(p["client_id"]), int(p["session_id"]), np.asarray(p["values"], dtype=float))
        for p in doc["patterns"]
    ]
