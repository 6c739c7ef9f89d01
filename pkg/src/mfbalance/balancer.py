"""Dynamic load-balancing cycle and baseline strategies.

One cycle runs: estimate the generalized Hurst spread over the latest
analysis window, collect utilization and queue statistics, plan per-class
resources with a burstiness surcharge, forecast per-server load with a
Hurst-coupled EWMA, drain the queues through the composite-score selector,
redirect inflow away from servers whose load was underestimated, snapshot the
imbalance metrics, and schedule the next cycle at an interval that shrinks as
the traffic gets more multifractal. Round-robin and least-loaded selectors
are provided as comparison baselines, as is a fixed-interval variant of the
dynamic strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping, NamedTuple, Sequence

from .cluster import CPU_WARN_THRESHOLD, OverloadLevel
from .errors import DegenerateSeriesError, ParameterError
from .fractal import AnalysisWindow, HurstEstimate, estimate_generalized_hurst
from .metrics import (
    REFERENCE_FLOOR,
    ILB_VARIANTS,
    ImbalanceReport,
    MetricWeights,
    ServerSnapshot,
    imbalance_suite,
    select_reference,
)
from .queueing import BalancerStats
from .traffic import Request, ResourceDemand, ServiceClass

if TYPE_CHECKING:  # pragma: no cover
    from .engine import Simulation

FALLBACK_HURST = 0.5
HURST_CLAMP = 0.01


class Strategy(str, Enum):
    DYNAMIC_MULTIFRACTAL = "dynamic_multifractal"
    ROUND_ROBIN = "round_robin"
    LEAST_LOADED = "least_loaded"
    FIXED_INTERVAL_DYNAMIC = "fixed_interval_dynamic"

    @property
    def uses_forecasts(self) -> bool:
        return self in (Strategy.DYNAMIC_MULTIFRACTAL, Strategy.FIXED_INTERVAL_DYNAMIC)


@dataclass(frozen=True)
class BalancerConfig:
    window: AnalysisWindow
    monitor_interval_min: int
    monitor_interval_max: int
    weights: MetricWeights
    strategy: Strategy = Strategy.DYNAMIC_MULTIFRACTAL
    delta_h_ref: float = 0.5
    forecast_alpha_bounds: tuple[float, float] = (0.1, 0.9)
    provisioning_gamma: float = 0.5
    provisioning_delta: float = 0.5
    underestimate_margin: float = 0.1
    overload_window: int = 3
    ilb_variant: str = "printed"

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(
            self, "forecast_alpha_bounds", tuple(self.forecast_alpha_bounds)
        )
        if not 0 < self.monitor_interval_min <= self.monitor_interval_max:
            raise ParameterError("need 0 < monitor_interval_min <= monitor_interval_max")
        if self.delta_h_ref <= 0:
            raise ParameterError("delta_h_ref must be > 0")
        lo, hi = self.forecast_alpha_bounds
        if not 0 < lo <= hi < 1:
            raise ParameterError("forecast_alpha_bounds must satisfy 0 < lo <= hi < 1")
        if self.provisioning_gamma < 0 or self.provisioning_delta < 0:
            raise ParameterError("provisioning coefficients must be >= 0")
        if self.underestimate_margin < 0:
            raise ParameterError("underestimate_margin must be >= 0")
        if self.overload_window < 1:
            raise ParameterError("overload_window must be >= 1")
        if self.ilb_variant not in ILB_VARIANTS:
            raise ParameterError(f"ilb_variant must be one of {ILB_VARIANTS}")


class ResourceVector(NamedTuple):
    """Aggregate resource amounts; unlike a request demand, may be all zero."""

    cpu: float
    net: float
    ram: float


@dataclass(frozen=True)
class ClassTrafficStats:
    """Observed per-class traffic over one window: mean requests per tick and
    mean demand arriving per tick."""

    qs: int
    request_rate: float
    demand_rate: ResourceVector


@dataclass(frozen=True)
class ClassResourceEstimate:
    """Resources to provision for one class over the next window."""

    qs: int
    required: ResourceVector
    basis: tuple[float, float, float]  # (request rate, hurst, delta_h)

    def __post_init__(self):
        if min(self.required) < 0:
            raise ParameterError("required components must be >= 0")


@dataclass(frozen=True)
class LoadForecast:
    """Predicted (cpu, ram, net) utilization for one server over the next
    monitoring interval."""

    server_id: int
    predicted: tuple[float, float, float]
    alpha: float
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "predicted", tuple(float(v) for v in self.predicted))
        if min(self.predicted) < 0:
            raise ParameterError("predicted components must be >= 0")


@dataclass(frozen=True)
class ReassignmentAction:
    server_from: int
    server_to: int
    reason: str = "cpu_underestimated"


@dataclass(frozen=True)
class CycleRecord:
    """One row of the decision log: everything a balancing cycle did."""

    tick: int
    strategy: Strategy
    estimate: HurstEstimate | None
    interval_next: int
    stats: BalancerStats
    imbalance: ImbalanceReport
    assignments: tuple[tuple[int, int, int], ...]  # (request_id, qs, server_id)
    n_no_feasible: int
    actions: tuple[ReassignmentAction, ...]
    class_plan: tuple[ClassResourceEstimate, ...]
    overload: tuple[tuple[int, OverloadLevel], ...]
    flags: tuple[str, ...]


def monitoring_interval(delta_h: float, config: BalancerConfig) -> int:
    """Ticks until the next cycle: interpolates from the slowest interval at
    delta_h = 0 down to the fastest at delta_h >= delta_h_ref; midpoints round
    up. Monotone non-increasing in delta_h."""
    if delta_h < 0:
        raise ParameterError("delta_h must be >= 0")
    span = config.monitor_interval_max - config.monitor_interval_min
    fraction = min(delta_h / config.delta_h_ref, 1.0)
    interval = int(math.floor(config.monitor_interval_max - span * fraction + 0.5))
    return max(config.monitor_interval_min, min(config.monitor_interval_max, interval))


def forecast_alpha(hurst: float, bounds: tuple[float, float]) -> float:
    """EWMA weight coupled to persistence: smoother as H approaches 1."""
    lo, hi = bounds
    return min(max(2.0 * (1.0 - hurst), lo), hi)


def forecast_load(
    server_id: int,
    history: Sequence[tuple[float, float, float]],
    hurst: float,
    config: BalancerConfig,
    horizon: int | None = None,
) -> LoadForecast:
    """EWMA forecast of (cpu, ram, net) utilization. The state starts at the
    first history sample and consumes the rest, so a constant history predicts
    the constant for every H."""
    if not history:
        raise ParameterError("history must be non-empty")
    if not 0 < hurst < 1:
        raise ParameterError("hurst must be in (0, 1)")
    alpha = forecast_alpha(hurst, config.forecast_alpha_bounds)
    state = tuple(float(v) for v in history[0])
    for sample in history[1:]:
        state = tuple(
            (1.0 - alpha) * s + alpha * float(v) for s, v in zip(state, sample)
        )
    return LoadForecast(
        server_id=server_id,
        predicted=state,
        alpha=alpha,
        horizon=horizon if horizon is not None else config.monitor_interval_min,
    )


def class_resources(
    stats: Sequence[ClassTrafficStats],
    estimate: HurstEstimate,
    config: BalancerConfig,
) -> dict[int, ClassResourceEstimate]:
    """Provisioning plan per class: mean demand over the window scaled up by a
    surcharge that grows with persistence (H above 0.5) and multifractality
    (delta_h)."""
    surcharge = (
        1.0
        + config.provisioning_gamma * max(estimate.hurst - 0.5, 0.0)
        + config.provisioning_delta * max(estimate.delta_h, 0.0)
    )
    length = config.window.length
    plan: dict[int, ClassResourceEstimate] = {}
    for cls in stats:
        required = ResourceVector(
            cpu=cls.demand_rate.cpu * length * surcharge,
            net=cls.demand_rate.net * length * surcharge,
            ram=cls.demand_rate.ram * length * surcharge,
        )
        plan[cls.qs] = ClassResourceEstimate(
            qs=cls.qs,
            required=required,
            basis=(cls.request_rate, estimate.hurst, estimate.delta_h),
        )
    return plan


def demand_fits(
    utilization: tuple[float, float, float],
    demand: ResourceDemand,
    snapshot: ServerSnapshot,
) -> bool:
    """Feasibility rule shared by every strategy: CPU utilization at most 1.0
    and the demand's RAM/link shares fit under the capacities."""
    cpu, ram, net = utilization
    return (
        cpu <= 1.0
        and ram + demand.ram / snapshot.ram_capacity <= 1.0
        and net + demand.net / snapshot.link_capacity <= 1.0
    )


def _score_terms(
    utilization: tuple[float, float, float], snapshot: ServerSnapshot
) -> tuple[float, float, float]:
    cpu, ram, net = utilization
    return (
        snapshot.cpu_capability * cpu,
        snapshot.ram_capacity * ram,
        net * snapshot.link_capacity,
    )


def select_server(
    request: Request,
    forecasts: Mapping[int, LoadForecast],
    snapshots: Sequence[ServerSnapshot],
    config: BalancerConfig,
    avoid: frozenset[int] = frozenset(),
) -> int | None:
    """Pick the feasible server with the smallest composite score, ties by
    lowest server id; None when nothing is feasible.

    Feasibility and scoring read each server's forecast utilization when one
    is given, its snapshot utilization otherwise. Servers in ``avoid`` are
    skipped unless that would empty the feasible set. Zero reference terms are
    floored so the comparison stays total.
    """
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    ordered = sorted(snapshots, key=lambda s: s.server_id)

    def view(s: ServerSnapshot) -> tuple[float, float, float]:
        f = forecasts.get(s.server_id)
        return f.predicted if f is not None else (s.cpu_util, s.ram_util, s.net_util)

    feasible = [s for s in ordered if demand_fits(view(s), request.demand, s)]
    if not feasible:
        return None
    pool = [s for s in feasible if s.server_id not in avoid] or feasible

    reference = select_reference(ordered, config.weights)
    ref_cpu, ref_ram, ref_net = _score_terms(view(reference), reference)
    ref_cpu = max(ref_cpu, reference.cpu_capability * REFERENCE_FLOOR)
    ref_ram = max(ref_ram, reference.ram_capacity * REFERENCE_FLOOR)
    ref_net = max(ref_net, REFERENCE_FLOOR)

    best_id = None
    best_score = math.inf
    w = config.weights
    for s in pool:
        cpu_term, ram_term, net_term = _score_terms(view(s), s)
        score = w.a * cpu_term / ref_cpu + w.b * ram_term / ref_ram + w.c * net_term / ref_net
        if score < best_score:
            best_score = score
            best_id = s.server_id
    return best_id


def rebalance_underestimate(
    forecasts: Mapping[int, LoadForecast],
    actuals: Sequence[ServerSnapshot],
    config: BalancerConfig,
) -> list[ReassignmentAction]:
    """Redirect inflow away from servers whose actual CPU load beat the
    forecast by more than the margin while running above the warning
    threshold. Overestimation triggers nothing."""
    ids = {s.server_id for s in actuals}
    if set(forecasts) != ids:
        raise ParameterError("forecasts and actuals must cover the same servers")
    overloaded = [
        s
        for s in sorted(actuals, key=lambda s: s.server_id)
        if s.cpu_util > forecasts[s.server_id].predicted[0] + config.underestimate_margin
        and s.cpu_util > CPU_WARN_THRESHOLD
    ]
    if not overloaded:
        return []
    flagged = {s.server_id for s in overloaded}
    actions: list[ReassignmentAction] = []
    for source in overloaded:
        candidates = [s for s in actuals if s.server_id not in flagged]
        if not candidates:
            break
        target_id = select_server(
            _PROBE_REQUEST,
            {},
            candidates,
            config,
        )
        if target_id is None:
            target_id = min(s.server_id for s in candidates)
        actions.append(ReassignmentAction(source.server_id, target_id))
    return actions


# Zero-footprint probe used to rank servers by score when no concrete request
# demand applies (rebalancing targets).
def _make_probe() -> Request:
    cls = ServiceClass(
        qs=0,
        max_delay=1,
        max_loss_fraction=1.0,
        demand_profiles=(ResourceDemand(cpu=0.0, net=0.0, ram=1e-12),),
        service_duration=1,
        lifetime=1,
    )
    return Request(
        id=-1,
        service_class=cls,
        demand=cls.demand_profiles[0],
        arrival=0,
        lifetime=1,
        service_duration=1,
    )


_PROBE_REQUEST = _make_probe()


def baseline_round_robin(
    request: Request,
    snapshots: Sequence[ServerSnapshot],
    pointer: int,
) -> tuple[int | None, int]:
    """Cycle server ids in ascending order, skipping infeasible ones. Returns
    (server_id or None, advanced pointer)."""
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    ordered = sorted(snapshots, key=lambda s: s.server_id)
    n = len(ordered)
    for step in range(n):
        idx = (pointer + step) % n
        s = ordered[idx]
        if demand_fits((s.cpu_util, s.ram_util, s.net_util), request.demand, s):
            return s.server_id, (idx + 1) % n
    return None, pointer


def baseline_least_loaded(
    request: Request, snapshots: Sequence[ServerSnapshot]
) -> int | None:
    """Feasible server with the lowest CPU utilization, ties by lowest id."""
    if not snapshots:
        raise ParameterError("snapshot list must be non-empty")
    feasible = [
        s
        for s in sorted(snapshots, key=lambda s: s.server_id)
        if demand_fits((s.cpu_util, s.ram_util, s.net_util), request.demand, s)
    ]
    if not feasible:
        return None
    return min(feasible, key=lambda s: (s.cpu_util, s.server_id)).server_id


class Balancer:
    """Stateful cycle driver owned by the simulation engine."""

    def __init__(self, config: BalancerConfig, server_ids: Sequence[int]):
        self.config = config
        self.server_ids = sorted(server_ids)
        self.histories: dict[int, list[tuple[float, float, float]]] = {
            sid: [] for sid in self.server_ids
        }
        self.prev_estimate: HurstEstimate | None = None
        self.prev_forecasts: dict[int, LoadForecast] = {}
        self.rr_pointer = 0
        self.avoid: frozenset[int] = frozenset()

    def _estimate_window(
        self, sim: "Simulation", now: int
    ) -> tuple[HurstEstimate | None, tuple[str, ...]]:
        """Latest shift-aligned full window ending at or before now; falls
        back to the previous estimate (or a neutral default) when the window
        is not yet available or the series is degenerate."""
        cfg = self.config
        window = cfg.window
        flags: list[str] = []
        estimate: HurstEstimate | None = None
        if now < window.length:
            flags.append("warmup")
        else:
            start = ((now - window.length) // window.shift) * window.shift
            series = sim.arrival_counts[start : start + window.length]
            try:
                estimate = estimate_generalized_hurst(series, window, window_start=start)
            except (ParameterError, DegenerateSeriesError):
                flags.append("estimation_degenerate")
        if estimate is None:
            if self.prev_estimate is not None:
                estimate = self.prev_estimate
                flags.append("reused_previous")
            else:
                flags.append("fallback_default")
        return estimate, tuple(flags)

    def _drain(
        self,
        sim: "Simulation",
        now: int,
        forecasts: dict[int, LoadForecast],
        interval: int,
    ) -> tuple[list[tuple[int, int, int]], int]:
        """Assign queued requests until every queue is empty or blocked.

        Queues are merged in global priority order; a queue whose head cannot
        be placed is blocked for the rest of the cycle so nothing in it
        overtakes its own head. Working utilizations track each commitment so
        one batch spreads across servers.
        """
        cfg = self.config
        strategy = cfg.strategy
        snapshots = {sid: sim.servers[sid].snapshot() for sid in self.server_ids}
        working: dict[int, list[float]] = {}
        for sid in self.server_ids:
            f = forecasts.get(sid)
            if f is not None:
                working[sid] = list(f.predicted)
            else:
                s = snapshots[sid]
                working[sid] = [s.cpu_util, s.ram_util, s.net_util]

        assignments: list[tuple[int, int, int]] = []
        blocked: set[int] = set()
        n_no_feasible = 0
        flow_ids = sorted(sim.queues)
        while True:
            head_key = None
            head_flow = None
            request = None
            for fid in flow_ids:
                if fid in blocked:
                    continue
                entry = sim.queues[fid].peek_entry(now)
                if entry is None:
                    blocked.add(fid)
                    continue
                key = entry[0] + (fid,)
                if head_key is None or key < head_key:
                    head_key = key
                    head_flow = fid
                    request = entry[1]
            if head_flow is None:
                break
            queue = sim.queues[head_flow]
            sid = self._select(request, forecasts, snapshots, working)
            if sid is None or not sim.servers[sid].fits(request.demand):
                n_no_feasible += 1
                blocked.add(head_flow)
                continue
            queue.pop(now)
            sim.assign_request(request, sid, now)
            spec = snapshots[sid]
            working[sid][0] += request.demand.cpu / spec.core_count
            working[sid][1] += request.demand.ram / spec.ram_capacity
            working[sid][2] += request.demand.net / spec.link_capacity
            if strategy.uses_forecasts:
                forecasts[sid] = LoadForecast(
                    server_id=sid,
                    predicted=tuple(working[sid]),
                    alpha=forecasts[sid].alpha,
                    horizon=interval,
                )
            snapshots[sid] = sim.servers[sid].snapshot()
            assignments.append((request.id, request.qs, sid))
        return assignments, n_no_feasible

    def _select(
        self,
        request: Request,
        forecasts: dict[int, LoadForecast],
        snapshots: dict[int, ServerSnapshot],
        working: dict[int, list[float]],
    ) -> int | None:
        strategy = self.config.strategy
        snapshot_list = [snapshots[sid] for sid in self.server_ids]
        if strategy.uses_forecasts:
            return select_server(
                request, forecasts, snapshot_list, self.config, avoid=self.avoid
            )
        live = [
            ServerSnapshot(
                server_id=s.server_id,
                cpu_util=working[s.server_id][0],
                ram_util=min(working[s.server_id][1], 1.0),
                net_util=min(working[s.server_id][2], 1.0),
                cpu_capability=s.cpu_capability,
                ram_capacity=s.ram_capacity,
                core_count=s.core_count,
                link_capacity=s.link_capacity,
                net_throughput=min(working[s.server_id][2], 1.0) * s.link_capacity,
            )
            for s in snapshot_list
        ]
        if strategy is Strategy.ROUND_ROBIN:
            sid, self.rr_pointer = baseline_round_robin(request, live, self.rr_pointer)
            return sid
        return baseline_least_loaded(request, live)

    def run_cycle(self, sim: "Simulation", now: int) -> CycleRecord:
        """Execute one full balancing cycle at the current tick and report
        everything it decided."""
        cfg = self.config
        dynamic = cfg.strategy.uses_forecasts
        flags: list[str] = []

        estimate: HurstEstimate | None = None
        if dynamic:
            estimate, est_flags = self._estimate_window(sim, now)
            flags.extend(est_flags)

        # Collect utilization samples and queue statistics.
        overload: list[tuple[int, OverloadLevel]] = []
        for sid in self.server_ids:
            state = sim.servers[sid]
            state.record_sample()
            overload.append((sid, state.overload_flags(cfg.overload_window)))
            self.histories[sid].append((state.cpu_util, state.ram_util, state.net_util))
            if len(self.histories[sid]) > 64:
                self.histories[sid] = self.histories[sid][-64:]
        stats = sim.stats_since_last(now)
        actuals = [sim.servers[sid].snapshot() for sid in self.server_ids]

        # Per-class resource plan and the next monitoring interval.
        plan: tuple[ClassResourceEstimate, ...] = ()
        if dynamic and estimate is not None:
            hurst = estimate.hurst
            if not HURST_CLAMP < hurst < 1 - HURST_CLAMP:
                hurst = min(max(hurst, HURST_CLAMP), 1 - HURST_CLAMP)
                flags.append("hurst_clamped")
            delta_h = max(estimate.delta_h, 0.0)
            if "warmup" not in flags:
                class_stats = sim.class_traffic_window(
                    estimate.window_start, estimate.window_end
                )
                plan = tuple(class_resources(class_stats, estimate, cfg).values())
        else:
            hurst = FALLBACK_HURST
            delta_h = 0.0

        if cfg.strategy is Strategy.DYNAMIC_MULTIFRACTAL:
            interval_next = monitoring_interval(delta_h, cfg)
        else:
            interval_next = cfg.monitor_interval_min

        forecasts: dict[int, LoadForecast] = {}
        if dynamic:
            forecasts = {
                sid: forecast_load(
                    sid, self.histories[sid], hurst, cfg, horizon=interval_next
                )
                for sid in self.server_ids
            }

        # Drain queues, then react to underestimated servers.
        new_forecasts = dict(forecasts)
        assignments, n_no_feasible = self._drain(sim, now, new_forecasts, interval_next)

        actions: tuple[ReassignmentAction, ...] = ()
        if dynamic and self.prev_forecasts:
            actions = tuple(
                rebalance_underestimate(self.prev_forecasts, actuals, cfg)
            )
        self.avoid = frozenset(a.server_from for a in actions)

        report = imbalance_suite(
            [sim.servers[sid].snapshot() for sid in self.server_ids],
            variant=cfg.ilb_variant,
        )

        # Commitments made during the drain are part of what we now expect,
        # so the post-drain forecasts are the baseline for the next
        # underestimation check.
        self.prev_forecasts = new_forecasts
        if dynamic and estimate is not None and "reused_previous" not in flags:
            self.prev_estimate = estimate

        return CycleRecord(
            tick=now,
            strategy=cfg.strategy,
            estimate=estimate,
            interval_next=interval_next,
            stats=stats,
            imbalance=report,
            assignments=tuple(assignments),
            n_no_feasible=n_no_feasible,
            actions=actions,
            class_plan=plan,
            overload=tuple(overload),
            flags=tuple(flags),
        )
