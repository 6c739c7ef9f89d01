"""Composite server-selection score and the variance-based imbalance suite.

All functions are pure over immutable snapshots. The selection score B
compares a candidate server against a reference server term by term (CPU,
memory, network) under configurable weights; the imbalance values measure how
far per-server utilizations spread around capacity-weighted system averages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DegenerateReferenceError, ParameterError

REFERENCE_FLOOR = 1e-6

ILB_VARIANTS = ("printed", "per_server")


@dataclass(frozen=True)
class MetricWeights:
    """Weighting factors for the CPU, memory, and network terms of B."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0:
            raise ParameterError("weights must be >= 0")
        if self.a + self.b + self.c <= 0:
            raise ParameterError("at least one weight must be > 0")


@dataclass(frozen=True)
class ServerSnapshot:
    """Immutable view of one server's utilization and capacities at a tick."""

    server_id: int
    cpu_util: float
    ram_util: float
    net_util: float
    cpu_capability: float
    ram_capacity: float
    core_count: int
    link_capacity: float
    net_throughput: float

    def __post_init__(self):
        if self.cpu_util < 0:
            raise ParameterError("cpu_util must be >= 0")
        if not 0 <= self.ram_util <= 1 or not 0 <= self.net_util <= 1:
            raise ParameterError("ram_util and net_util must be in [0, 1]")
        if min(self.cpu_capability, self.ram_capacity, self.link_capacity) <= 0:
            raise ParameterError("capacities must be > 0")
        if self.core_count < 1:
            raise ParameterError("core_count must be >= 1")


@dataclass(frozen=True)
class ImbalanceReport:
    """All system imbalance values for one snapshot set."""

    cpu_avg: float
    ram_avg: float
    net_avg: float
    per_server_ilb: Mapping[int, float]
    ibl_cpu: float
    ibl_ram: float
    ibl_net: float
    ibl_tot: float
    ibl_avg_pm: float
    ibl_avg_sys: float
    server_count: int


def metric_b(
    candidate: ServerSnapshot, reference: ServerSnapshot, weights: MetricWeights
) -> float:
    """Weighted three-resource score of a candidate relative to the reference.

    Raises DegenerateReferenceError when any reference term is zero; callers
    that must stay total substitute ``REFERENCE_FLOOR`` for the zero
    utilization (see :func:`metric_b_floored`).
    """
    cpu_ref = reference.cpu_capability * reference.cpu_util
    ram_ref = reference.ram_capacity * reference.ram_util
    net_ref = reference.net_throughput
    if cpu_ref == 0 or ram_ref == 0 or net_ref == 0:
        raise DegenerateReferenceError(
            f"reference server {reference.server_id} has a zero utilization term"
        )
    return (
        weights.a * (candidate.cpu_capability * candidate.cpu_util) / cpu_ref
        + weights.b * (candidate.ram_capacity * candidate.ram_util) / ram_ref
        + weights.c * candidate.net_throughput / net_ref
    )


def metric_b_floored(
    candidate: ServerSnapshot, reference: ServerSnapshot, weights: MetricWeights
) -> tuple[float, bool]:
    """Like :func:`metric_b` but substitutes a small floor for zero reference
    utilizations. Returns (score, floored?)."""
    cpu_ref = reference.cpu_capability * max(reference.cpu_util, REFERENCE_FLOOR)
    ram_ref = reference.ram_capacity * max(reference.ram_util, REFERENCE_FLOOR)
    net_ref = max(reference.net_throughput, REFERENCE_FLOOR)
    floored = (
        reference.cpu_util < REFERENCE_FLOOR
        or reference.ram_util < REFERENCE_FLOOR
        or reference.net_throughput < REFERENCE_FLOOR
    )
    score = (
        weights.a * (candidate.cpu_capability * candidate.cpu_util) / cpu_ref
        + weights.b * (candidate.ram_capacity * candidate.ram_util) / ram_ref
        + weights.c * candidate.net_throughput / net_ref
    )
    return score, floored


def select_reference(
    snapshots: Sequence[ServerSnapshot], weights: MetricWeights
) -> ServerSnapshot:
    """Pick the reference server: largest weighted composite capacity, ties by
    lowest server id. Deterministic and stable across a run."""
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    return max(
        snapshots,
        key=lambda s: (
            weights.a * s.cpu_capability
            + weights.b * s.ram_capacity
            + weights.c * s.link_capacity,
            -s.server_id,
        ),
    )


def resource_averages(
    snapshots: Sequence[ServerSnapshot],
) -> tuple[float, float, float]:
    """Capacity-weighted mean utilizations: CPU weighted by core count, memory
    by memory capacity, network by link capacity."""
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    cores = sum(s.core_count for s in snapshots)
    ram_cap = sum(s.ram_capacity for s in snapshots)
    link_cap = sum(s.link_capacity for s in snapshots)
    if cores <= 0:
        raise ParameterError("total core count must be > 0")
    cpu_avg = sum(s.cpu_util * s.core_count for s in snapshots) / cores
    ram_avg = sum(s.ram_util * s.ram_capacity for s in snapshots) / ram_cap
    net_avg = sum(s.net_util * s.link_capacity for s in snapshots) / link_cap
    return cpu_avg, ram_avg, net_avg


def ilb(
    server: ServerSnapshot,
    averages: tuple[float, float, float],
    variant: str = "printed",
) -> float:
    """Integrated load imbalance of one server against the system averages.

    The default compares the server's mean utilization with each system-wide
    average; the "per_server" variant instead spreads the server's own three
    utilizations around its own mean.
    """
    if variant not in ILB_VARIANTS:
        raise ParameterError(f"variant must be one of {ILB_VARIANTS}")
    avg_i = (server.cpu_util + server.ram_util + server.net_util) / 3.0
    if variant == "printed":
        cpu_avg, ram_avg, net_avg = averages
        return (
            (avg_i - cpu_avg) ** 2 + (avg_i - ram_avg) ** 2 + (avg_i - net_avg) ** 2
        ) / 3.0
    return (
        (server.cpu_util - avg_i) ** 2
        + (server.ram_util - avg_i) ** 2
        + (server.net_util - avg_i) ** 2
    ) / 3.0


def imbalance_suite(
    snapshots: Sequence[ServerSnapshot], variant: str = "printed"
) -> ImbalanceReport:
    """Compute every imbalance value for a snapshot set."""
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    averages = resource_averages(snapshots)
    cpu_avg, ram_avg, net_avg = averages
    per_server = {s.server_id: ilb(s, averages, variant) for s in snapshots}
    ibl_cpu = sum((s.cpu_util - cpu_avg) ** 2 for s in snapshots)
    ibl_ram = sum((s.ram_util - ram_avg) ** 2 for s in snapshots)
    ibl_net = sum((s.net_util - net_avg) ** 2 for s in snapshots)
    ibl_tot = sum(per_server.values())
    n = len(snapshots)
    return ImbalanceReport(
        cpu_avg=cpu_avg,
        ram_avg=ram_avg,
        net_avg=net_avg,
        per_server_ilb=per_server,
        ibl_cpu=ibl_cpu,
        ibl_ram=ibl_ram,
        ibl_net=ibl_net,
        ibl_tot=ibl_tot,
        ibl_avg_pm=ibl_tot / n,
        ibl_avg_sys=(ibl_cpu + ibl_ram + ibl_net) / n,
        server_count=n,
    )
