"""Server, core, memory, and link model with utilization accounting.

Each server tracks its active assignments; utilizations are recomputed from
that set after every mutation, so committed resources always equal the sum of
active demands exactly and releasing everything restores the pristine state
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import AssignmentRejectedError, ConsistencyError, ParameterError
from .metrics import ServerSnapshot
from .traffic import Request, ResourceDemand

CPU_WARN_THRESHOLD = 0.70
CPU_CRITICAL_THRESHOLD = 1.00
DEFAULT_WARN_WINDOW = 3


class OverloadLevel(str, Enum):
    NORMAL = "normal"
    WARN = "warn"
    CRITICAL = "critical"


@dataclass(frozen=True)
class ServerSpec:
    """Static capacities of one server. Core layout does not matter; only the
    total core count does."""

    server_id: int
    core_count: int
    cpu_capability: float
    ram_capacity: float
    link_capacity: float

    def __post_init__(self):
        if self.core_count < 1:
            raise ParameterError("core_count must be >= 1")
        if min(self.cpu_capability, self.ram_capacity, self.link_capacity) <= 0:
            raise ParameterError("capacities must be > 0")


@dataclass(frozen=True)
class ReleaseEvent:
    """Signals that a class-qs assignment started at start_tick finishes at
    release_tick and its resources must be extricated."""

    server_id: int
    request_id: int
    qs: int
    start_tick: int
    release_tick: int
    released_demand: ResourceDemand

    def __post_init__(self):
        if self.release_tick <= self.start_tick:
            raise ParameterError("release_tick must be > start_tick")


@dataclass(frozen=True)
class _Assignment:
    request_id: int
    qs: int
    start_tick: int
    demand: ResourceDemand
    core_index: int


class ServerState:
    """Mutable per-server load state, owned by the simulation engine."""

    def __init__(self, spec: ServerSpec):
        self.spec = spec
        self.core_loads: list[float] = [0.0] * spec.core_count
        self.ram_util = 0.0
        self.net_util = 0.0
        self.assignments: dict[int, _Assignment] = {}
        self.cpu_history: list[float] = []

    @property
    def cpu_util(self) -> float:
        """Per-core average load; invariant under re-partitioning cores."""
        return sum(self.core_loads) / self.spec.core_count

    def _recompute(self) -> None:
        loads = [0.0] * self.spec.core_count
        ram = 0.0
        net = 0.0
        for a in self.assignments.values():
            loads[a.core_index] += a.demand.cpu
            ram += a.demand.ram
            net += a.demand.net
        self.core_loads = loads
        self.ram_util = ram / self.spec.ram_capacity
        self.net_util = net / self.spec.link_capacity

    def fits(self, demand: ResourceDemand) -> bool:
        """Whether assigning the demand would keep RAM and link utilization at
        or below capacity. Uses the same accumulation as the post-assignment
        recompute, so a True answer guarantees assign() succeeds."""
        ram = 0.0
        net = 0.0
        for a in self.assignments.values():
            ram += a.demand.ram
            net += a.demand.net
        ram += demand.ram
        net += demand.net
        return (
            ram / self.spec.ram_capacity <= 1.0
            and net / self.spec.link_capacity <= 1.0
        )

    def assign(self, request: Request, now: int) -> ReleaseEvent:
        """Place the request on the least-loaded core (ties: lowest index).

        Raises AssignmentRejectedError when RAM or link capacity would be
        exceeded; the caller must pick another server or count a loss.
        Returns the completion event to schedule at now + service_duration.
        """
        if request.id in self.assignments:
            raise ConsistencyError(f"request {request.id} already assigned")
        core = min(range(len(self.core_loads)), key=lambda i: (self.core_loads[i], i))
        self.assignments[request.id] = _Assignment(
            request_id=request.id,
            qs=request.qs,
            start_tick=now,
            demand=request.demand,
            core_index=core,
        )
        self._recompute()
        if self.ram_util > 1.0 or self.net_util > 1.0:
            del self.assignments[request.id]
            self._recompute()
            raise AssignmentRejectedError(
                f"server {self.spec.server_id} cannot hold request {request.id}"
            )
        return ReleaseEvent(
            server_id=self.spec.server_id,
            request_id=request.id,
            qs=request.qs,
            start_tick=now,
            release_tick=now + request.service_duration,
            released_demand=request.demand,
        )

    def release(self, event: ReleaseEvent) -> None:
        """Close the referenced assignment and free its resources."""
        found = self.assignments.get(event.request_id)
        if found is None:
            raise ConsistencyError(
                f"release of unknown assignment {event.request_id} "
                f"on server {self.spec.server_id}"
            )
        if found.demand != event.released_demand or found.start_tick != event.start_tick:
            raise ConsistencyError(
                f"release event does not match assignment {event.request_id}"
            )
        del self.assignments[event.request_id]
        self._recompute()
        assert self.ram_util >= 0 and self.net_util >= 0
        assert all(load >= 0 for load in self.core_loads)

    def record_sample(self) -> None:
        """Append the current CPU utilization to the monitoring history."""
        self.cpu_history.append(self.cpu_util)

    def overload_flags(self, warn_window: int = DEFAULT_WARN_WINDOW) -> OverloadLevel:
        """Classify the monitored CPU history: critical when the latest sample
        exceeds 1.00, warn when it exceeded 0.70 for warn_window consecutive
        samples."""
        if not self.cpu_history:
            return OverloadLevel.NORMAL
        if self.cpu_history[-1] > CPU_CRITICAL_THRESHOLD:
            return OverloadLevel.CRITICAL
        recent = self.cpu_history[-warn_window:]
        if len(recent) >= warn_window and all(u > CPU_WARN_THRESHOLD for u in recent):
            return OverloadLevel.WARN
        return OverloadLevel.NORMAL

    def snapshot(self) -> ServerSnapshot:
        """Immutable copy of the current utilizations for the metrics suite."""
        return ServerSnapshot(
            server_id=self.spec.server_id,
            cpu_util=self.cpu_util,
            ram_util=self.ram_util,
            net_util=self.net_util,
            cpu_capability=self.spec.cpu_capability,
            ram_capacity=self.spec.ram_capacity,
            core_count=self.spec.core_count,
            link_capacity=self.spec.link_capacity,
            net_throughput=self.net_util * self.spec.link_capacity,
        )
