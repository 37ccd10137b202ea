"""Discrete-event cloud with ART2-driven pre-allocation.

Requests arrive at their ready time and need ``n`` VM instances. Instances
boot with a startup delay, fetch non-resident objects at a per-object
delay, and are billed at a flat rate from boot until termination.

Without prefetching, provisioning is purely on demand: every request boots
its own instances and releases them when it completes.

With prefetching, an online ART2 network learns per-client session pattern
vectors at session boundaries. An arriving client's recent access pattern
is classified against the frozen network; on a match the cluster keeps a
reserved pool of warm instances holding the prototype's most popular
objects. Instances released by a classified client's request rejoin that
pool, and idle pool members are reclaimed after ``idle_timeout``.
"""

from __future__ import annotations

import enum
import heapq
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import art2
from .art2 import Art2Network, Art2Params
from .features import popularity


class RequestKind(str, enum.Enum):
    DEADLINE = "deadline"
    BEST_EFFORT = "best_effort"


class Slack(enum.Enum):
    TIGHT = 1.0
    RELAXED = 2.0

    @classmethod
    def parse(cls, value) -> "Slack":
        if isinstance(value, Slack):
            return value
        return cls[str(value).upper()]

    @property
    def label(self) -> str:
        return self.name.lower()


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Request:
    id: int
    client_id: int
    n: int
    ready_time: float
    deadline: float
    objects: tuple[int, ...]
    service_time: float
    kind: RequestKind = RequestKind.DEADLINE
    services: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"request {self.id}: n must be >= 1")
        if self.service_time <= 0:
            raise ValueError(f"request {self.id}: service_time must be positive")
        if self.kind is RequestKind.DEADLINE and self.deadline < self.ready_time:
            raise ValueError(f"request {self.id}: deadline precedes ready time")


@dataclass
class Instance:
    id: int
    boot_started: float
    available_from: float
    busy_until: float = 0.0
    # object id -> time it is (or becomes) resident, in LRU order
    hosted_objects: OrderedDict = field(default_factory=OrderedDict)
    accumulated_runtime: float = 0.0
    tag: Optional[int] = None
    idle_since: float = 0.0
    terminated_at: Optional[float] = None
    # plan objects already staged since the last dispatch
    staged: tuple = ()

    def resident(self, obj, at: float) -> bool:
        since = self.hosted_objects.get(obj)
        return since is not None and since <= at

    def missing(self, objects, at: float) -> int:
        hosted = self.hosted_objects
        return sum(1 for o in objects if o not in hosted or hosted[o] > at)

    def stage(self, objects, start: float, per_object: float, capacity: int) -> None:
        """Transfer ``objects`` one after another from ``start``; LRU-evict past ``capacity``."""
        hosted = self.hosted_objects
        t = start
        for o in objects:
            if o in hosted and hosted[o] <= t:
                hosted.move_to_end(o)
                continue
            t += per_object
            hosted[o] = min(hosted.get(o, t), t)
            hosted.move_to_end(o)
        while len(hosted) > capacity:
            hosted.popitem(last=False)


@dataclass(frozen=True)
class SimConfig:
    duration: float
    rate: float = 1.0
    startup_delay: float = 50.0
    fetch_delay: float = 10.0
    prefetch_top_k: int = 10
    prefetch_enabled: bool = False
    deadline_slack: Slack = Slack.TIGHT
    seed: int = 0
    # sessions arrive one at a time, so prototypes learn slowly and average them
    art2: Art2Params = field(default_factory=lambda: Art2Params(rho=0.85, learning_rate=0.2))
    n_clients: int = 50
    n_objects: int = 200
    session_window: float = 2000.0
    idle_timeout: Optional[float] = None
    instance_cache: int = 16
    sample_every: Optional[float] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.rate < 0 or self.startup_delay < 0 or self.fetch_delay < 0:
            raise ValueError("rate and delays must be >= 0")
        if self.prefetch_top_k < 0:
            raise ValueError("prefetch_top_k must be >= 0")
        if self.session_window <= 0:
            raise ValueError("session_window must be positive")
        if self.instance_cache < max(1, self.prefetch_top_k):
            raise ValueError("instance_cache must hold at least prefetch_top_k objects")
        object.__setattr__(self, "deadline_slack", Slack.parse(self.deadline_slack))

    @property
    def reclaim_after(self) -> float:
        return 2.0 * self.startup_delay if self.idle_timeout is None else self.idle_timeout

    @property
    def sample_interval(self) -> float:
        return self.session_window if self.sample_every is None else self.sample_every


@dataclass
class SimMetrics:
    submitted: int = 0
    completed: int = 0
    rejected: int = 0
    in_flight: int = 0
    total_instance_runtime: float = 0.0
    total_cost: float = 0.0
    prefetch_hits: int = 0
    prefetch_misses: int = 0
    instances_booted: int = 0
    art2_nodes: int = 0
    cost_per_task_series: list = field(default_factory=list)

    @property
    def cost_per_task(self) -> Optional[float]:
        return self.total_cost / self.completed if self.completed else None

    @property
    def prefetch_hit_rate(self) -> Optional[float]:
        total = self.prefetch_hits + self.prefetch_misses
        return self.prefetch_hits / total if total else None

    def as_dict(self) -> dict:
        """Flat key-value view (the series is emitted separately)."""
        return {
            "submitted": self.submitted,
            "completed": self.completed,
            "rejected": self.rejected,
            "in_flight": self.in_flight,
            "total_instance_runtime": self.total_instance_runtime,
            "total_cost": self.total_cost,
            "cost_per_task": self.cost_per_task,
            "prefetch_hits": self.prefetch_hits,
            "prefetch_misses": self.prefetch_misses,
            "prefetch_hit_rate": self.prefetch_hit_rate,
            "instances_booted": self.instances_booted,
            "art2_nodes": self.art2_nodes,
        }


@dataclass(frozen=True)
class PrefetchPlan:
    node: int = art2.UNCLASSIFIED
    objects: tuple[int, ...] = ()
    preboot: int = 0

    @property
    def empty(self) -> bool:
        return self.node == art2.UNCLASSIFIED


EMPTY_PLAN = PrefetchPlan()


@dataclass(frozen=True)
class Dispatch:
    """Log entry for one admitted request."""

    request_id: int
    time: float
    instances: tuple[int, ...]
    completion: float
    planned: bool
    hits: int
    misses: int



# equal-time events run in this order
COMPLETE, READY, SAMPLE, SESSION, ARRIVAL, DISPATCH_BEST_EFFORT, IDLE_CHECK = range(7)


def apply_deadline_slack(workload: Sequence[Request], slack) -> list[Request]:
    """Stretch each deadline window ``deadline - ready_time`` by the slack multiplier."""
    mult = Slack.parse(slack).value
    if mult == 1.0:
        return list(workload)
    out = []
    for r in workload:
        deadline = r.ready_time + mult * (r.deadline - r.ready_time)
        out.append(Request(r.id, r.client_id, r.n, r.ready_time, deadline, r.objects,
                           r.service_time, r.kind, r.services))
    return out


class SimState:
    def __init__(self, config: SimConfig):
        self.config = config
        self.now = 0.0
        self.instances: dict[int, Instance] = {}
        self.free: dict[int, Instance] = {}
        # idle instances per cluster node, a partition of ``free``
        self.pools: dict[int, dict[int, Instance]] = {}
        self.retired: list[Instance] = []
        self.live = 0
        self.metrics = SimMetrics()
        self.network: Optional[Art2Network] = None
        self.network_version = 0
        self.classified: dict[int, tuple[int, int]] = {}
        self.history: dict[int, deque] = {}
        # node -> [sum of n, request count] over classified arrivals
        self.node_n: dict[int, list[int]] = {}
        self.top_cache: dict[int, tuple[int, tuple[int, ...]]] = {}
        self.running: dict[int, tuple[Request, PrefetchPlan, list[Instance], float]] = {}
        self.best_effort: deque[Request] = deque()
        self.dispatches: list[Dispatch] = []
        self._next_instance = 0

    def boot(self, now: float, tag: Optional[int] = None, objects=()) -> Instance:
        """Start an instance; ``objects`` are staged in the background once it is up."""
        cfg = self.config
        inst = Instance(
            id=self._next_instance,
            boot_started=now,
            available_from=now + cfg.startup_delay,
            tag=tag,
        )
        inst.stage(objects, inst.available_from, cfg.fetch_delay, cfg.instance_cache)
        self._next_instance += 1
        self.instances[inst.id] = inst
        self.live += 1
        self.metrics.instances_booted += 1
        return inst

    def release(self, inst: Instance, node: int) -> None:
        inst.tag = node
        self.free[inst.id] = inst
        self.pools.setdefault(node, {})[inst.id] = inst

    def take(self, inst: Instance) -> None:
        if self.free.pop(inst.id, None) is not None:
            self.pools[inst.tag].pop(inst.id)

    def pool(self, node: int) -> dict[int, Instance]:
        return self.pools.get(node, {})

    def terminate(self, inst: Instance, when: float) -> None:
        inst.terminated_at = when
        inst.accumulated_runtime = when - inst.boot_started
        self.take(inst)
        del self.instances[inst.id]
        self.retired.append(inst)
        self.live -= 1


def accrue_cost(state: SimState, start: float, end: float) -> float:
    """Bill every live instance for ``[start, end)``; returns the amount added.

    The event loop only calls this between consecutive events, when the set
    of live instances is constant, so a live count times the interval is
    the per-instance overlap sum.
    """
    if end < start:
        raise SimulationError(f"cannot accrue backwards ({start} -> {end})")
    added = state.live * (end - start) * state.config.rate
    state.metrics.total_cost += added
    return added


def plan_acquisition(state: SimState, request: Request, now: float, pool=None):
    """Pick the ``n`` earliest-ready idle instances; ``None`` entries mean fresh boots.

    ``pool`` restricts the candidates (default: every idle instance).

    Returns ``(choices, completion_time)``.
    """
    cfg = state.config
    fetch = cfg.fetch_delay
    objects = request.objects
    fresh_ready = now + cfg.startup_delay + fetch * len(set(objects))
    candidates = []
    for inst in (state.free.values() if pool is None else pool):
        start = inst.available_from if inst.available_from > now else now
        if start > fresh_ready:
            continue
        hosted = inst.hosted_objects
        ready = start
        for o in objects:
            since = hosted.get(o)
            if since is None or since > start:
                ready += fetch
        if ready <= fresh_ready:
            candidates.append((ready, inst.id, inst))
    ranked = heapq.nsmallest(request.n, candidates) if len(candidates) > request.n else sorted(candidates)
    choices: list[Optional[Instance]] = [inst for _, _, inst in ranked]
    latest = max((ready for ready, _, _ in ranked), default=now)
    if len(choices) < request.n:
        latest = max(latest, fresh_ready)
        choices.extend([None] * (request.n - len(choices)))
    return choices, max(latest, now) + request.service_time


def _feasible(request: Request, completion: float) -> bool:
    return request.kind is RequestKind.BEST_EFFORT or completion <= request.deadline


def candidate_pool(state: SimState, plan: PrefetchPlan):
    """Idle instances a request may take: its cluster's reserved pool, or none."""
    return () if plan.empty else state.pool(plan.node).values()


def admit(request: Request, state: SimState, now: float, plan: PrefetchPlan = None) -> bool:
    """Deadline requests are accepted iff their earliest completion meets the deadline."""
    if request.kind is RequestKind.BEST_EFFORT:
        return True
    _, completion = plan_acquisition(state, request, now, candidate_pool(state, plan or EMPTY_PLAN))
    return _feasible(request, completion)


def running_pattern(state: SimState, client_id: int, now: float) -> Optional[np.ndarray]:
    cfg = state.config
    hist = state.history.get(client_id)
    if not hist:
        return None
    counts = np.zeros(cfg.n_objects)
    for t, objects in hist:
        if t > now - cfg.session_window:
            for o in objects:
                counts[o] += 1
    if not counts.any():
        return None
    return popularity(counts)


def classify_client(state: SimState, client_id: int, now: float) -> int:
    """Cached per client per network version."""
    cached = state.classified.get(client_id)
    if cached is not None and cached[0] == state.network_version:
        return cached[1]
    node = art2.UNCLASSIFIED
    pattern = running_pattern(state, client_id, now)
    if pattern is not None and pattern.any():
        try:
            node = art2.present(state.network, pattern, learning=False).node
        except art2.Art2Error:
            node = art2.UNCLASSIFIED
    state.classified[client_id] = (state.network_version, node)
    return node


def top_objects(network: Art2Network, node: int, k: int) -> tuple[int, ...]:
    proto = network.prototype(node)
    order = np.argsort(-proto, kind="stable")[:k]
    return tuple(int(o) for o in order if proto[o] > 0)


def prefetch_decide(network: Optional[Art2Network], client_id: int, state: SimState, config: SimConfig) -> PrefetchPlan:
    if not config.prefetch_enabled or network is None or network.committed == 0:
        return EMPTY_PLAN
    node = classify_client(state, client_id, state.now)
    if node == art2.UNCLASSIFIED:
        return EMPTY_PLAN
    tally = state.node_n.get(node)
    preboot = math.ceil(tally[0] / tally[1]) if tally else 1
    cached = state.top_cache.get(node)
    if cached is None or cached[0] != state.network_version:
        cached = (state.network_version, top_objects(network, node, config.prefetch_top_k))
        state.top_cache[node] = cached
    return PrefetchPlan(node, cached[1], preboot)


class Simulator:
    def __init__(self, config: SimConfig, workload: Sequence[Request]):
        self.config = config
        self.workload = apply_deadline_slack(workload, config.deadline_slack)
        for prev, cur in zip(self.workload, self.workload[1:]):
            if cur.ready_time < prev.ready_time:
                raise ValueError(f"workload not sorted by arrival at request {cur.id}")
        self.state = SimState(config)
        if config.prefetch_enabled:
            self.state.network = art2.new_network(config.art2, config.n_objects)
        self._queue: list = []
        self._seq = 0
        self._last_time = 0.0
        # dequeue times, kept for auditing the run
        self.event_times: list[float] = []

    def _push(self, time: float, kind: int, payload=None) -> None:
        heapq.heappush(self._queue, (time, kind, self._seq, payload))
        self._seq += 1

    def run(self) -> SimMetrics:
        cfg = self.config
        st = self.state
        for req in self.workload:
            if req.ready_time <= cfg.duration:
                self._push(req.ready_time, ARRIVAL, req)
        step = cfg.sample_interval
        k = 1
        while k * step <= cfg.duration + 1e-9:
            self._push(k * step, SAMPLE)
            k += 1
        if cfg.prefetch_enabled:
            k = 1
            while k * cfg.session_window <= cfg.duration + 1e-9:
                self._push(k * cfg.session_window, SESSION)
                k += 1

        handlers = {
            COMPLETE: self._on_complete,
            READY: self._on_ready,
            SAMPLE: self._on_sample,
            SESSION: self._on_session,
            ARRIVAL: self._on_arrival,
            DISPATCH_BEST_EFFORT: self._on_best_effort,
            IDLE_CHECK: self._on_idle_check,
        }
        while self._queue and self._queue[0][0] <= cfg.duration:
            time, kind, _, payload = heapq.heappop(self._queue)
            if time < self._last_time:
                raise SimulationError(f"event time went backwards: {time} < {self._last_time}")
            accrue_cost(st, self._last_time, time)
            self._last_time = st.now = time
            self.event_times.append(time)
            handlers[kind](payload)

        accrue_cost(st, self._last_time, cfg.duration)
        st.now = cfg.duration
        return self._finish()

    def _finish(self) -> SimMetrics:
        st = self.state
        m = st.metrics
        for inst in list(st.instances.values()):
            inst.accumulated_runtime = self.config.duration - inst.boot_started
        m.in_flight = len(st.running) + len(st.best_effort)
        m.total_instance_runtime = math.fsum(
            i.accumulated_runtime for i in list(st.retired) + list(st.instances.values())
        )
        if st.network is not None:
            m.art2_nodes = st.network.committed
        return m

    # event handlers -----------------------------------------------------

    def _on_arrival(self, req: Request) -> None:
        st, cfg = self.state, self.config
        now = st.now
        st.metrics.submitted += 1
        st.history.setdefault(req.client_id, deque()).append((now, req.objects))
        hist = st.history[req.client_id]
        while hist and hist[0][0] <= now - cfg.session_window:
            hist.popleft()

        plan = prefetch_decide(st.network, req.client_id, st, cfg)
        if not plan.empty:
            tally = st.node_n.setdefault(plan.node, [0, 0])
            tally[0] += req.n
            tally[1] += 1

        if req.kind is RequestKind.BEST_EFFORT:
            st.best_effort.append((req, plan))
            self._push(now, DISPATCH_BEST_EFFORT)
        else:
            acquisition = plan_acquisition(st, req, now, candidate_pool(st, plan))
            if _feasible(req, acquisition[1]):
                self._dispatch(req, plan, acquisition)
            else:
                st.metrics.rejected += 1

        if not plan.empty:
            self._apply_plan(plan)

    def _on_best_effort(self, _payload) -> None:
        st = self.state
        while st.best_effort:
            req, plan = st.best_effort.popleft()
            self._dispatch(req, plan)

    def _dispatch(self, req: Request, plan: PrefetchPlan, acquisition=None) -> None:
        st, cfg = self.state, self.config
        now = st.now
        choices, completion = acquisition or plan_acquisition(st, req, now, candidate_pool(st, plan))
        objects = tuple(dict.fromkeys(req.objects))
        hits = misses = 0
        if not plan.empty:
            fresh = any(inst is None for inst in choices)
            for o in req.objects:
                if not fresh and all(i.resident(o, max(now, i.available_from)) for i in choices):
                    hits += 1
                else:
                    misses += 1
            st.metrics.prefetch_hits += hits
            st.metrics.prefetch_misses += misses

        held = []
        for inst in choices:
            if inst is None:
                inst = st.boot(now)
            else:
                st.take(inst)
            # on-demand fetches finish before the service starts; exact times are moot while held
            inst.stage(objects, max(now, inst.available_from), 0.0, cfg.instance_cache)
            inst.busy_until = completion
            inst.staged = ()
            held.append(inst)
        st.running[req.id] = (req, plan, held, now)
        st.dispatches.append(Dispatch(req.id, now, tuple(i.id for i in held), completion,
                                      not plan.empty, hits, misses))
        self._push(completion, COMPLETE, req.id)

    def _on_complete(self, request_id: int) -> None:
        st = self.state
        now = st.now
        req, plan, held, _ = st.running.pop(request_id)
        st.metrics.completed += 1
        for inst in held:
            if plan.empty:
                st.terminate(inst, now)
                continue
            # released capacity stays reserved for the requesting client's cluster
            inst.idle_since = now
            st.release(inst, plan.node)
            self._push(now + self.config.reclaim_after, IDLE_CHECK, (inst.id, now))

    def _on_ready(self, instance_id: int) -> None:
        st = self.state
        inst = st.instances.get(instance_id)
        if inst is None or instance_id not in st.free or inst.available_from != st.now:
            return
        inst.idle_since = st.now
        self._push(st.now + self.config.reclaim_after, IDLE_CHECK, (inst.id, st.now))

    def _on_idle_check(self, payload) -> None:
        st = self.state
        instance_id, stamp = payload
        inst = st.free.get(instance_id)
        if inst is not None and inst.idle_since == stamp and inst.available_from <= st.now:
            st.terminate(inst, st.now)

    def _on_sample(self, _payload) -> None:
        """Cost per completed task, leaving out what in-flight work has accrued so far."""
        st = self.state
        m = st.metrics
        if not m.completed:
            return
        in_flight = math.fsum(len(held) * (st.now - started) for _, _, held, started in st.running.values())
        m.cost_per_task_series.append((st.now, (m.total_cost - in_flight * self.config.rate) / m.completed))

    def _on_session(self, _payload) -> None:
        st, cfg = self.state, self.config
        now = st.now
        net = st.network
        for client in sorted(st.history):
            counts = np.zeros(cfg.n_objects)
            for t, objects in st.history[client]:
                if now - cfg.session_window <= t < now:
                    for o in objects:
                        counts[o] += 1
            if not counts.any():
                continue
            pattern = popularity(counts)
            if not pattern.any():
                continue
            try:
                art2.present(net, pattern, learning=True)
            except (art2.CapacityError, art2.ConvergenceError):
                continue
        st.network_version += 1

    def _apply_plan(self, plan: PrefetchPlan) -> None:
        """Keep ``plan.preboot`` idle instances reserved for the node, objects staged."""
        st, cfg = self.state, self.config
        now = st.now
        reserved = list(st.pool(plan.node).values())
        for inst in reserved:
            if inst.staged != plan.objects:
                inst.stage(plan.objects, max(now, inst.available_from), cfg.fetch_delay, cfg.instance_cache)
                inst.staged = plan.objects
        for _ in range(plan.preboot - len(reserved)):
            inst = st.boot(now, plan.node, plan.objects)
            inst.staged = plan.objects
            st.release(inst, plan.node)
            self._push(inst.available_from, READY, inst.id)


def run(config: SimConfig, workload: Sequence[Request]) -> SimMetrics:
    return Simulator(config, workload).run()
