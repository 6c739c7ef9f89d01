"""Balancer-side bounded priority queues with probabilistic ejection.

Each flow feeds one queue. Service order is by class priority (lower qs
first), then earliest arrival, then admission order. A full queue rejects
arrivals unless the arrival strictly out-ranks the lowest-priority occupant,
in which case that occupant is displaced with the configured probability:
either lost, or demoted to the tail of its priority stratum while keeping its
original arrival tick for waiting-time accounting. Requests expire after
their lifetime and are dropped when the queue is next inspected.

Every admission, service, expiry, ejection, and rejection is appended to an
event log so loss and waiting-time statistics can be recounted over any
window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ParameterError
from .traffic import Request


class DisplacedFate(str, Enum):
    LOST = "lost"
    REQUEUED = "requeued"


class EnqueueOutcome(str, Enum):
    ACCEPTED = "accepted"
    ACCEPTED_WITH_EJECTION = "accepted_with_ejection"
    REJECTED = "rejected"


@dataclass(frozen=True)
class QueueConfig:
    capacity: int
    eject_probability: float = 1.0
    displaced_fate: DisplacedFate = DisplacedFate.LOST

    def __post_init__(self):
        object.__setattr__(self, "displaced_fate", DisplacedFate(self.displaced_fate))
        if self.capacity < 1:
            raise ParameterError("capacity must be >= 1")
        if not 0 <= self.eject_probability <= 1:
            raise ParameterError("eject_probability must be in [0, 1]")


@dataclass(frozen=True)
class EnqueueResult:
    outcome: EnqueueOutcome
    victim: Request | None = None
    victim_lost: bool = False


class QueueEvent(NamedTuple):
    tick: int
    kind: str  # arrival | served | expired | ejected_lost | rejected | requeued
    qs: int
    wait: int | None


@dataclass
class ClassCounters:
    arrivals: int = 0
    served: int = 0
    expired: int = 0
    ejected_lost: int = 0
    rejected: int = 0
    requeued: int = 0
    queued: int = 0
    wait_sum: int = 0

    @property
    def losses(self) -> int:
        return self.expired + self.ejected_lost + self.rejected


@dataclass(frozen=True)
class BalancerStats:
    """Per-class loss fractions and mean waits over one window.

    ``queued`` in a window's counters is the net backlog change within the
    window (arrivals minus all settled outcomes); for a full-history window it
    equals the number of requests still queued.
    """

    window: tuple[int, int]
    loss_fraction: dict[int, float]
    mean_wait: dict[int, float | None]
    counters: dict[int, ClassCounters]


@dataclass
class _Entry:
    request: Request
    rank_arrival: int  # arrival tick for ordering; bumped on requeue
    seq: int

    def order_key(self) -> tuple[int, int, int]:
        return (self.request.qs, self.rank_arrival, self.seq)


class PriorityEjectQueue:
    """One flow's bounded queue with the probabilistic eject mechanism.

    Several queues may share one ``event_sink`` list so the balancer-wide
    event log stays in chronological order without merging.
    """

    def __init__(self, config: QueueConfig, event_sink: list[QueueEvent] | None = None):
        self.config = config
        self.entries: list[_Entry] = []
        self.events: list[QueueEvent] = event_sink if event_sink is not None else []
        self.counters: dict[int, ClassCounters] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _count(self, qs: int) -> ClassCounters:
        if qs not in self.counters:
            self.counters[qs] = ClassCounters()
        return self.counters[qs]

    def _log(self, tick: int, kind: str, qs: int, wait: int | None = None) -> None:
        self.events.append(QueueEvent(tick, kind, qs, wait))

    def _admit(self, request: Request) -> None:
        self.entries.append(_Entry(request, request.arrival, self._seq))
        self._seq += 1

    def enqueue(
        self, request: Request, now: int, rng: np.random.Generator
    ) -> EnqueueResult:
        """Admit, admit-by-ejection, or reject the arrival. Never raises; all
        three outcomes are modeled results."""
        qs = request.qs
        self._count(qs).arrivals += 1
        self._log(now, "arrival", qs)

        if len(self.entries) < self.config.capacity:
            self._admit(request)
            return EnqueueResult(EnqueueOutcome.ACCEPTED)

        lowest = max(e.request.qs for e in self.entries)
        if qs < lowest and rng.random() < self.config.eject_probability:
            victims = [e for e in self.entries if e.request.qs == lowest]
            victim = min(victims, key=lambda e: (e.rank_arrival, e.seq))
            if self.config.displaced_fate is DisplacedFate.LOST:
                self.entries.remove(victim)
                self._count(victim.request.qs).ejected_lost += 1
                self._log(now, "ejected_lost", victim.request.qs)
                victim_lost = True
            else:
                # Demoted to the tail of its priority stratum; keeps its
                # original arrival tick for waiting-time accounting. The
                # buffer holds one extra entry until the next dequeue drains.
                victim.rank_arrival = now
                victim.seq = self._seq
                self._seq += 1
                self._count(victim.request.qs).requeued += 1
                self._log(now, "requeued", victim.request.qs)
                victim_lost = False
            self._admit(request)
            return EnqueueResult(
                EnqueueOutcome.ACCEPTED_WITH_EJECTION,
                victim=victim.request,
                victim_lost=victim_lost,
            )

        self._count(qs).rejected += 1
        self._log(now, "rejected", qs)
        return EnqueueResult(EnqueueOutcome.REJECTED)

    def _purge_expired(self, now: int) -> None:
        alive: list[_Entry] = []
        for e in self.entries:
            if e.request.expiry < now:
                self._count(e.request.qs).expired += 1
                self._log(now, "expired", e.request.qs)
            else:
                alive.append(e)
        self.entries = alive

    def peek(self, now: int) -> Request | None:
        """Return (without removing) the request dequeue would yield now.
        Expired requests encountered are dropped and counted."""
        entry = self.peek_entry(now)
        return entry[1] if entry is not None else None

    def peek_entry(self, now: int) -> tuple[tuple[int, int, int], Request] | None:
        """Head request together with its service-order key, for merging
        several queues in global priority order."""
        self._purge_expired(now)
        if not self.entries:
            return None
        head = min(self.entries, key=_Entry.order_key)
        return head.order_key(), head.request

    def pop(self, now: int) -> Request | None:
        """Remove and return the head request, counting it as served."""
        self._purge_expired(now)
        if not self.entries:
            return None
        head = min(self.entries, key=_Entry.order_key)
        self.entries.remove(head)
        request = head.request
        self._count(request.qs).served += 1
        self._log(now, "served", request.qs, wait=now - request.arrival)
        return request

    def dequeue(self, now: int) -> Request | None:
        """Remove and return the highest-priority non-expired request, or None
        when nothing serviceable remains."""
        return self.pop(now)

    def queued_by_class(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.request.qs] = out.get(e.request.qs, 0) + 1
        return out

    def check_conservation(self) -> None:
        """Assert arrivals = served + expired + ejected_lost + rejected +
        queued for every class. ConsistencyError-grade bug if violated."""
        queued = self.queued_by_class()
        for qs, c in self.counters.items():
            settled = c.served + c.expired + c.ejected_lost + c.rejected
            assert c.arrivals == settled + queued.get(qs, 0), (
                f"conservation violated for class {qs}"
            )


def stats_window(
    events: Iterable[QueueEvent], window: tuple[int, int]
) -> BalancerStats:
    """Recount loss fractions and mean waits from an event log over the
    half-open window [start, end)."""
    start, end = window
    if end <= start:
        raise ParameterError("window end must be > start")
    counters: dict[int, ClassCounters] = {}
    waits: dict[int, list[int]] = {}
    for ev in events:
        if not start <= ev.tick < end:
            continue
        c = counters.setdefault(ev.qs, ClassCounters())
        if ev.kind == "arrival":
            c.arrivals += 1
        elif ev.kind == "served":
            c.served += 1
            c.wait_sum += ev.wait
            waits.setdefault(ev.qs, []).append(ev.wait)
        elif ev.kind == "expired":
            c.expired += 1
        elif ev.kind == "ejected_lost":
            c.ejected_lost += 1
        elif ev.kind == "rejected":
            c.rejected += 1
        elif ev.kind == "requeued":
            c.requeued += 1

    loss_fraction: dict[int, float] = {}
    mean_wait: dict[int, float | None] = {}
    for qs, c in sorted(counters.items()):
        c.queued = c.arrivals - c.served - c.expired - c.ejected_lost - c.rejected
        if c.arrivals == 0:
            loss_fraction[qs] = 0.0
        else:
            loss_fraction[qs] = min(1.0, c.losses / c.arrivals)
        qs_waits = waits.get(qs)
        mean_wait[qs] = sum(qs_waits) / len(qs_waits) if qs_waits else None
    return BalancerStats(
        window=(start, end),
        loss_fraction=loss_fraction,
        mean_wait=mean_wait,
        counters=dict(sorted(counters.items())),
    )


def merge_events(queues: Iterable[PriorityEjectQueue]) -> list[QueueEvent]:
    """All queues' events in a deterministic order (by tick, then insertion)."""
    merged: list[QueueEvent] = []
    for q in queues:
        merged.extend(q.events)
    merged.sort(key=lambda ev: ev.tick)
    return merged
