"""Deterministic discrete-event simulation core.

A run expands every flow into a request stream up front, then processes
events in (tick, insertion-sequence) order: arrivals enqueue, balancing
cycles run the configured strategy, completions release server resources.
Per-module random streams are derived from the scenario seed by fixed
labels, so the same scenario and seed always produce a bit-identical report.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .balancer import (
    Balancer,
    BalancerConfig,
    ClassTrafficStats,
    CycleRecord,
    ResourceVector,
)
from .cluster import ServerSpec, ServerState
from .errors import ConsistencyError, ParameterError
from .fractal import HurstEstimate
from .metrics import ImbalanceReport, imbalance_suite
from .queueing import (
    BalancerStats,
    ClassCounters,
    PriorityEjectQueue,
    QueueConfig,
    QueueEvent,
    stats_window,
)
from .traffic import (
    FlowSpec,
    Request,
    ServiceClass,
    generate_trace,
    trace_to_requests,
)

# Fixed labels for deriving per-module random streams from the scenario seed.
STREAM_TRAFFIC = 0
STREAM_REQUESTS = 1
STREAM_QUEUE = 2
STREAM_BALANCER = 3


def derived_seed(seed: int, *labels: int) -> int:
    """Stable per-module seed derived from the scenario seed."""
    ss = np.random.SeedSequence([int(seed), *[int(v) for v in labels]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Scenario:
    """Complete description of one simulation run."""

    duration: int
    seed: int
    flows: tuple[FlowSpec, ...]
    classes: tuple[ServiceClass, ...]
    class_mix: Mapping[int, float]
    servers: tuple[ServerSpec, ...]
    queue_config: QueueConfig
    balancer_config: BalancerConfig

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "servers", tuple(self.servers))
        object.__setattr__(
            self, "class_mix", {int(k): float(v) for k, v in self.class_mix.items()}
        )
        if self.duration <= 0:
            raise ParameterError("duration must be > 0")
        if not self.flows or not self.classes or not self.servers:
            raise ParameterError("flows, classes, and servers must be non-empty")
        flow_ids = [f.flow_id for f in self.flows]
        if len(set(flow_ids)) != len(flow_ids):
            raise ParameterError("flow ids must be unique")
        qs_values = [c.qs for c in self.classes]
        if len(set(qs_values)) != len(qs_values):
            raise ParameterError("class qs values must be unique")
        server_ids = [s.server_id for s in self.servers]
        if len(set(server_ids)) != len(server_ids):
            raise ParameterError("server ids must be unique")
        unknown = set(self.class_mix) - set(qs_values)
        if unknown:
            raise ParameterError(f"class_mix references unknown classes {sorted(unknown)}")
        if not self.class_mix:
            raise ParameterError("class_mix must be non-empty")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise ParameterError("class_mix probabilities must sum to 1")


@dataclass(frozen=True)
class SlaCheck:
    """End-of-run check of one class against its delay and loss bounds."""

    qs: int
    mean_wait: float | None
    max_delay: int
    wait_ok: bool
    loss_fraction: float
    max_loss_fraction: float
    loss_ok: bool


@dataclass(frozen=True)
class RunSummary:
    """Run-level aggregates; every field is recomputable from the report
    series alone."""

    duration: int
    cycle_count: int
    generated: int
    served: int
    expired: int
    ejected_lost: int
    rejected: int
    requeued: int
    queued_at_end: int
    loss_fraction_by_class: dict[int, float]
    mean_wait_by_class: dict[int, float | None]
    total_loss_fraction: float
    time_avg_ibl_sys: float
    time_avg_ibl_tot: float


@dataclass(frozen=True)
class SimReport:
    """Everything one run produced."""

    strategy: str
    seed: int
    duration: int
    cycles: tuple[CycleRecord, ...]
    imbalance_series: tuple[tuple[int, ImbalanceReport], ...]
    stats_series: tuple[tuple[int, BalancerStats], ...]
    hurst_series: tuple[tuple[int, HurstEstimate | None], ...]
    sla: tuple[SlaCheck, ...]
    summary: RunSummary

    def __post_init__(self):
        for series in (self.imbalance_series, self.stats_series, self.hurst_series):
            ticks = [t for t, _ in series]
            if any(b <= a for a, b in zip(ticks, ticks[1:])):
                raise ConsistencyError("series timestamps must be strictly increasing")


class EventQueue:
    """Total order by (tick, insertion sequence); stable under equal ticks."""

    def __init__(self):
        self._heap: list[tuple[int, int, Any]] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, tick: int, payload: Any) -> None:
        heapq.heappush(self._heap, (int(tick), self._seq, payload))
        self._seq += 1

    def pop(self) -> tuple[int, int, Any] | None:
        if not self._heap:
            return None
        return heapq.heappop(self._heap)

    def peek_tick(self) -> int | None:
        return self._heap[0][0] if self._heap else None


def _time_average(series: Sequence[tuple[int, float]]) -> float:
    """Step-function time average: each value holds until the next timestamp."""
    if not series:
        return 0.0
    if len(series) == 1:
        return float(series[0][1])
    span = series[-1][0] - series[0][0]
    total = 0.0
    for (t0, v0), (t1, _) in zip(series, series[1:]):
        total += v0 * (t1 - t0)
    return total / span


def build_summary(
    duration: int,
    cycle_count: int,
    imbalance_series: Sequence[tuple[int, ImbalanceReport]],
    stats_series: Sequence[tuple[int, BalancerStats]],
) -> RunSummary:
    """Aggregate the report series; the run's summary is defined as exactly
    this computation so it can always be recomputed."""
    totals: dict[int, ClassCounters] = {}
    for _, stats in stats_series:
        for qs, c in stats.counters.items():
            t = totals.setdefault(qs, ClassCounters())
            t.arrivals += c.arrivals
            t.served += c.served
            t.expired += c.expired
            t.ejected_lost += c.ejected_lost
            t.rejected += c.rejected
            t.requeued += c.requeued
            t.wait_sum += c.wait_sum

    loss_fraction: dict[int, float] = {}
    mean_wait: dict[int, float | None] = {}
    for qs in sorted(totals):
        c = totals[qs]
        loss_fraction[qs] = c.losses / c.arrivals if c.arrivals else 0.0
        mean_wait[qs] = c.wait_sum / c.served if c.served else None

    generated = sum(c.arrivals for c in totals.values())
    served = sum(c.served for c in totals.values())
    expired = sum(c.expired for c in totals.values())
    ejected = sum(c.ejected_lost for c in totals.values())
    rejected = sum(c.rejected for c in totals.values())
    requeued = sum(c.requeued for c in totals.values())
    losses = expired + ejected + rejected
    return RunSummary(
        duration=duration,
        cycle_count=cycle_count,
        generated=generated,
        served=served,
        expired=expired,
        ejected_lost=ejected,
        rejected=rejected,
        requeued=requeued,
        queued_at_end=generated - served - losses,
        loss_fraction_by_class=loss_fraction,
        mean_wait_by_class=mean_wait,
        total_loss_fraction=losses / generated if generated else 0.0,
        time_avg_ibl_sys=_time_average(
            [(t, r.ibl_avg_sys) for t, r in imbalance_series]
        ),
        time_avg_ibl_tot=_time_average([(t, r.ibl_tot) for t, r in imbalance_series]),
    )


class Simulation:
    """Single-run state: clock, queues, servers, event queue, accumulators."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.duration = scenario.duration
        self.classes = sorted(scenario.classes, key=lambda c: c.qs)
        self._class_index = {c.qs: i for i, c in enumerate(self.classes)}
        mix = {
            next(c for c in self.classes if c.qs == qs): p
            for qs, p in sorted(scenario.class_mix.items())
        }

        requests: list[Request] = []
        next_id = 0
        for flow in sorted(scenario.flows, key=lambda f: f.flow_id):
            trace = generate_trace(
                flow,
                self.duration,
                seed=derived_seed(scenario.seed, STREAM_TRAFFIC, flow.flow_id),
            )
            flow_requests = trace_to_requests(
                trace,
                mix,
                seed=derived_seed(scenario.seed, STREAM_REQUESTS, flow.flow_id),
                id_start=next_id,
            )
            next_id += len(flow_requests)
            requests.extend((flow.flow_id, r) for r in flow_requests)
        self.generated = len(requests)

        arrivals = np.array([r.arrival for _, r in requests], dtype=np.int64)
        self.arrival_counts = np.bincount(
            arrivals, minlength=self.duration
        ) if requests else np.zeros(self.duration, dtype=np.int64)

        n_classes = len(self.classes)
        self.class_counts = np.zeros((self.duration, n_classes), dtype=np.int64)
        self.class_demand = np.zeros((self.duration, n_classes, 3))
        for _, r in requests:
            i = self._class_index[r.qs]
            self.class_counts[r.arrival, i] += 1
            d = r.demand
            self.class_demand[r.arrival, i, 0] += d.cpu
            self.class_demand[r.arrival, i, 1] += d.net
            self.class_demand[r.arrival, i, 2] += d.ram

        self.queue_events: list[QueueEvent] = []
        self.queues = {
            f.flow_id: PriorityEjectQueue(scenario.queue_config, self.queue_events)
            for f in sorted(scenario.flows, key=lambda f: f.flow_id)
        }
        self.servers = {
            s.server_id: ServerState(s)
            for s in sorted(scenario.servers, key=lambda s: s.server_id)
        }
        self.balancer = Balancer(scenario.balancer_config, list(self.servers))
        self.queue_rng = np.random.default_rng(
            derived_seed(scenario.seed, STREAM_QUEUE)
        )

        self.events = EventQueue()
        for flow_id, request in sorted(
            requests, key=lambda fr: (fr[1].arrival, fr[0], fr[1].id)
        ):
            self.events.push(request.arrival, ("arrival", flow_id, request))
        first_cycle = scenario.balancer_config.monitor_interval_min
        if first_cycle < self.duration:
            self.events.push(first_cycle, ("cycle",))

        self.completed = 0
        self._stats_cursor = 0
        self._last_stats_tick = 0

    # Hooks used by the balancing cycle -------------------------------------

    def assign_request(self, request: Request, server_id: int, now: int) -> None:
        """Commit a request to a server and schedule its completion."""
        release = self.servers[server_id].assign(request, now)
        self.events.push(release.release_tick, ("release", release))

    def stats_since_last(self, now: int) -> BalancerStats:
        """Queue statistics over the window since the previous cycle."""
        events = self.queue_events
        start_idx = self._stats_cursor
        while self._stats_cursor < len(events) and events[self._stats_cursor].tick < now:
            self._stats_cursor += 1
        window = (self._last_stats_tick, now)
        self._last_stats_tick = now
        return stats_window(events[start_idx : self._stats_cursor], window)

    def class_traffic_window(self, start: int, end: int) -> list[ClassTrafficStats]:
        """Observed per-class arrival rates over [start, end)."""
        if not 0 <= start < end <= self.duration:
            raise ParameterError("window out of range")
        n = end - start
        counts = self.class_counts[start:end].sum(axis=0)
        demand = self.class_demand[start:end].sum(axis=0)
        return [
            ClassTrafficStats(
                qs=c.qs,
                request_rate=float(counts[i]) / n,
                demand_rate=ResourceVector(
                    cpu=float(demand[i, 0]) / n,
                    net=float(demand[i, 1]) / n,
                    ram=float(demand[i, 2]) / n,
                ),
            )
            for i, c in enumerate(self.classes)
        ]

    # Main loop --------------------------------------------------------------

    def run(self) -> SimReport:
        cycles: list[CycleRecord] = []
        while len(self.events):
            tick, _, payload = self.events.pop()
            if tick > self.duration:
                break
            kind = payload[0]
            if kind == "arrival":
                _, flow_id, request = payload
                self.queues[flow_id].enqueue(request, tick, self.queue_rng)
            elif kind == "release":
                release = payload[1]
                self.servers[release.server_id].release(release)
                self.completed += 1
            else:
                record = self.balancer.run_cycle(self, tick)
                cycles.append(record)
                next_tick = tick + record.interval_next
                if next_tick < self.duration:
                    self.events.push(next_tick, ("cycle",))

        imbalance_series = [(c.tick, c.imbalance) for c in cycles]
        stats_series = [(c.tick, c.stats) for c in cycles]
        terminal = imbalance_suite(
            [self.servers[sid].snapshot() for sid in sorted(self.servers)],
            variant=self.scenario.balancer_config.ilb_variant,
        )
        imbalance_series.append((self.duration, terminal))
        if self.duration > self._last_stats_tick:
            stats_series.append(
                (self.duration, self.stats_since_last(self.duration))
            )
        self._audit()
        summary = build_summary(
            self.duration, len(cycles), imbalance_series, stats_series
        )
        sla = self._sla_checks(summary)
        return SimReport(
            strategy=self.scenario.balancer_config.strategy.value,
            seed=self.scenario.seed,
            duration=self.duration,
            cycles=tuple(cycles),
            imbalance_series=tuple(imbalance_series),
            stats_series=tuple(stats_series),
            hurst_series=tuple((c.tick, c.estimate) for c in cycles),
            sla=sla,
            summary=summary,
        )

    def _sla_checks(self, summary: RunSummary) -> tuple[SlaCheck, ...]:
        checks = []
        for cls in self.classes:
            wait = summary.mean_wait_by_class.get(cls.qs)
            loss = summary.loss_fraction_by_class.get(cls.qs, 0.0)
            checks.append(
                SlaCheck(
                    qs=cls.qs,
                    mean_wait=wait,
                    max_delay=cls.max_delay,
                    wait_ok=wait is None or wait <= cls.max_delay,
                    loss_fraction=loss,
                    max_loss_fraction=cls.max_loss_fraction,
                    loss_ok=loss <= cls.max_loss_fraction,
                )
            )
        return tuple(checks)

    def _audit(self) -> None:
        """End-of-run conservation audit; a violation is a simulator bug."""
        arrivals = served = expired = ejected = rejected = queued = 0
        for fid in sorted(self.queues):
            q = self.queues[fid]
            q.check_conservation()
            queued += len(q)
            for c in q.counters.values():
                arrivals += c.arrivals
                served += c.served
                expired += c.expired
                ejected += c.ejected_lost
                rejected += c.rejected
        if arrivals != self.generated:
            raise ConsistencyError(
                f"enqueued {arrivals} != generated {self.generated}"
            )
        if arrivals != served + expired + ejected + rejected + queued:
            raise ConsistencyError("global request conservation violated")
        active = sum(len(s.assignments) for s in self.servers.values())
        if served != self.completed + active:
            raise ConsistencyError(
                f"served {served} != completed {self.completed} + active {active}"
            )


def run(scenario: Scenario) -> SimReport:
    """Simulate the scenario to completion and return its report."""
    return Simulation(scenario).run()
