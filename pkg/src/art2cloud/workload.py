"""Synthetic request traces with planted client clusters."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .features import RequestLogRecord
from .simulator import Request, RequestKind

PAPER_DURATIONS = (2000, 4000, 8000, 12000, 16000, 20000, 30000)
LOG_EPOCH = dt.date(2010, 1, 1)
TIME_UNITS_PER_DAY = 1000


@dataclass(frozen=True)
class WorkloadSpec:
    n_clients: int = 50
    n_objects: int = 200
    services_per_app_range: tuple[int, int] = (10, 80)
    durations: tuple[int, ...] = PAPER_DURATIONS
    n_planted_clusters: int = 5
    intra_cluster_overlap: float = 0.9
    arrival_rate: float = 0.5
    deadline_base_slack: float = 4.0
    seed: int = 0
    replications: int = 5
    cluster_subset_size: int = 20
    zipf_exponent: float = 1.0
    objects_per_request: tuple[int, int] = (1, 3)
    services_per_vm: int = 25
    service_time_range: tuple[float, float] = (5.0, 50.0)
    best_effort_fraction: float = 0.2

    def __post_init__(self):
        problems = []
        if self.n_clients < 1 or self.n_objects < 1:
            problems.append("n_clients and n_objects must be >= 1")
        if not 1 <= self.n_planted_clusters <= self.n_clients:
            problems.append("n_planted_clusters must lie in [1, n_clients]")
        if self.n_planted_clusters * self.cluster_subset_size > self.n_objects:
            problems.append("cluster subsets do not fit in the catalog")
        for name in ("services_per_app_range", "objects_per_request", "service_time_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                problems.append(f"{name} must be an ordered positive range")
        if self.objects_per_request[1] > self.n_objects:
            problems.append("objects_per_request exceeds the catalog")
        for name in ("intra_cluster_overlap", "best_effort_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.arrival_rate <= 0:
            problems.append("arrival_rate must be positive")
        if self.deadline_base_slack < 0:
            problems.append("deadline_base_slack must be >= 0")
        if self.services_per_vm < 1 or self.replications < 1:
            problems.append("services_per_vm and replications must be >= 1")
        if not self.durations or any(d <= 0 for d in self.durations):
            problems.append("durations must be positive")
        if problems:
            raise ValueError("invalid workload spec: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkloadSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown workload spec keys: {sorted(unknown)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Workload:
    requests: list[Request]
    labels: np.ndarray
    subsets: list[np.ndarray] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (requests, labels)
        return iter((self.requests, self.labels))


def _cluster_layout(spec: WorkloadSpec, rng: np.random.Generator):
    k = spec.n_planted_clusters
    labels = rng.permutation(np.arange(spec.n_clients) % k)
    perm = rng.permutation(spec.n_objects)
    size = spec.cluster_subset_size
    subsets = [perm[i * size:(i + 1) * size] for i in range(k)]
    ranks = np.arange(1, size + 1, dtype=float)
    weights = ranks ** -spec.zipf_exponent
    return labels, subsets, weights / weights.sum()


def _draw_objects(rng, count, subset, weights, spec) -> tuple[int, ...]:
    chosen: list[int] = []
    while len(chosen) < count:
        if rng.random() < spec.intra_cluster_overlap:
            obj = int(subset[rng.choice(subset.size, p=weights)])
        else:
            obj = int(rng.integers(spec.n_objects))
        if obj not in chosen:
            chosen.append(obj)
    return tuple(chosen)


def generate(spec: WorkloadSpec, duration: float, seed: int | None = None) -> Workload:
    """Poisson arrivals over ``[0, duration)``, objects drawn per planted cluster.

    ``seed`` overrides ``spec.seed`` (used by the experiment matrix).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    labels, subsets, weights = _cluster_layout(spec, rng)
    lo_svc, hi_svc = spec.services_per_app_range
    lo_obj, hi_obj = spec.objects_per_request
    lo_t, hi_t = spec.service_time_range

    requests = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / spec.arrival_rate)
        if t >= duration:
            break
        ready = round(t, 3)
        client = int(rng.integers(spec.n_clients))
        services = int(rng.integers(lo_svc, hi_svc + 1))
        n = math.ceil(services / spec.services_per_vm)
        count = int(rng.integers(lo_obj, hi_obj + 1))
        objects = _draw_objects(rng, count, subsets[labels[client]], weights, spec)
        service_time = round(float(rng.uniform(lo_t, hi_t)), 3)
        kind = RequestKind.BEST_EFFORT if rng.random() < spec.best_effort_fraction else RequestKind.DEADLINE
        deadline = round(ready + service_time * (1.0 + spec.deadline_base_slack), 3)
        requests.append(
            Request(
                id=len(requests),
                client_id=client,
                n=n,
                ready_time=ready,
                deadline=deadline,
                objects=objects,
                service_time=service_time,
                kind=kind,
                services=services,
            )
        )
    return Workload(requests, labels, subsets)


def experiment_matrix(spec: WorkloadSpec) -> list[tuple[int, int]]:
    """(duration, seed) cells: every duration once per replication, replication-major."""
    cells = len(spec.durations) * spec.replications
    children = np.random.SeedSequence(spec.seed).spawn(cells)
    seeds = [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("derived seeds collided; choose another base seed")
    out = []
    for rep in range(spec.replications):
        for j, duration in enumerate(spec.durations):
            out.append((int(duration), seeds[rep * len(spec.durations) + j]))
    return out


# workload documents ------------------------------------------------------

WORKLOAD_FIELDS = ["id", "client", "n", "rt", "d", "objects", "service_time", "kind", "services"]


def write_requests(requests: Iterable[Request], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(WORKLOAD_FIELDS)
    for r in requests:
        writer.writerow([
            r.id, r.client_id, r.n, repr(r.ready_time), repr(r.deadline),
            ";".join(map(str, r.objects)), repr(r.service_time), r.kind.value, r.services,
        ])


def read_requests(fh: TextIO) -> list[Request]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or set(WORKLOAD_FIELDS) - set(reader.fieldnames) - {"services"}:
        raise ValueError(f"workload file must have columns {WORKLOAD_FIELDS}")
    out = []
    for row in reader:
        try:
            out.append(Request(
                id=int(row["id"]),
                client_id=int(row["client"]),
                n=int(row["n"]),
                ready_time=float(row["rt"]),
                deadline=float(row["d"]),
                objects=tuple(int(o) for o in row["objects"].split(";") if o),
                service_time=float(row["service_time"]),
                kind=RequestKind(row["kind"]),
                services=int(row.get("services") or 0),
            ))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"workload row {reader.line_num}: {exc}") from None
    return out


def write_labels(labels, fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["client", "label"])
    for client, label in enumerate(labels):
        writer.writerow([client, int(label)])


def read_labels(fh: TextIO) -> np.ndarray:
    rows = list(csv.DictReader(fh))
    labels = np.zeros(len(rows), dtype=int)
    for row in rows:
        labels[int(row["client"])] = int(row["label"])
    return labels


def to_log_records(requests: Iterable[Request]) -> list[RequestLogRecord]:
    """Project requests onto the five-field request-log format."""
    return [
        RequestLogRecord(
            client_id=r.client_id,
            date=LOG_EPOCH + dt.timedelta(days=int(r.ready_time // TIME_UNITS_PER_DAY)),
            requested_objects=r.objects,
            ready_time=r.ready_time,
            deadline=r.deadline,
        )
        for r in requests
    ]
