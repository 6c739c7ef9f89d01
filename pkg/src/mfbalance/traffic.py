"""Synthetic self-similar and multifractal traffic, converted into request streams.

Flow intensities come from one of three generators: exact fractional Gaussian
noise (circulant embedding), a conservative binomial multiplicative cascade,
or a constant rate. Traces are turned into typed requests by seeded categorical
draws over service classes and demand profiles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ParameterError

log = logging.getLogger(__name__)

TRACE_HEADER = "tick,intensity"


class FlowKind(str, Enum):
    """How a flow's per-tick intensity series is produced."""

    FGN = "fgn"
    CASCADE = "cascade"
    CONSTANT = "constant"


@dataclass(frozen=True)
class ResourceDemand:
    """Resource vector a request occupies while it runs: CPU core-fraction,
    link bandwidth units, memory units."""

    cpu: float
    net: float
    ram: float

    def __post_init__(self):
        if min(self.cpu, self.net, self.ram) < 0:
            raise ParameterError("demand components must be >= 0")
        if self.cpu == 0 and self.net == 0 and self.ram == 0:
            raise ParameterError("demand needs at least one positive component")


@dataclass(frozen=True)
class ServiceClass:
    """Priority tier with its delay/loss bounds and admissible demand profiles.

    Lower ``qs`` is higher priority. ``service_duration`` is how long a request
    of this class runs once assigned; ``lifetime`` is how long it stays valid
    while queued. Both are class-wide constants so runs stay hand-traceable.
    """

    qs: int
    max_delay: int
    max_loss_fraction: float
    demand_profiles: tuple[ResourceDemand, ...]
    service_duration: int
    lifetime: int

    def __post_init__(self):
        object.__setattr__(self, "demand_profiles", tuple(self.demand_profiles))
        if self.max_delay <= 0:
            raise ParameterError("max_delay must be > 0")
        if not 0 <= self.max_loss_fraction <= 1:
            raise ParameterError("max_loss_fraction must be in [0, 1]")
        if not self.demand_profiles:
            raise ParameterError("demand_profiles must be non-empty")
        if self.service_duration <= 0:
            raise ParameterError("service_duration must be > 0")
        if self.lifetime <= 0:
            raise ParameterError("lifetime must be > 0")


@dataclass(frozen=True)
class FlowSpec:
    """Parameters of one application flow feeding the balancer."""

    flow_id: int
    intensity_mean: float
    hurst_target: float
    kind: FlowKind = FlowKind.FGN
    cascade_weight: float | None = None
    intensity_scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FlowKind(self.kind))
        if self.intensity_mean <= 0:
            raise ParameterError("intensity_mean must be > 0")
        if not 0 < self.hurst_target < 1:
            raise ParameterError("hurst_target must be in (0, 1)")
        if self.kind is FlowKind.CASCADE:
            if self.cascade_weight is None or not 0.5 < self.cascade_weight < 1:
                raise ParameterError("cascade_weight must be in (0.5, 1)")
        if self.intensity_scale is not None and self.intensity_scale <= 0:
            raise ParameterError("intensity_scale must be > 0")

    @property
    def scale(self) -> float:
        """Noise amplitude used for fgn flows; defaults to a third of the mean
        so negative-value clipping stays negligible."""
        if self.intensity_scale is not None:
            return self.intensity_scale
        return self.intensity_mean / 3.0


@dataclass(frozen=True)
class Request:
    """One unit of work emitted by a flow."""

    id: int
    service_class: ServiceClass
    demand: ResourceDemand
    arrival: int
    lifetime: int
    service_duration: int

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ParameterError("lifetime must be > 0")
        if self.service_duration <= 0:
            raise ParameterError("service_duration must be > 0")

    @property
    def qs(self) -> int:
        return self.service_class.qs

    @property
    def expiry(self) -> int:
        """Last tick at which the request may still be dequeued."""
        return self.arrival + self.lifetime


@dataclass(frozen=True)
class TrafficTrace:
    """Timestamped per-flow intensity series with its generation parameters."""

    flow_id: int
    samples: tuple[tuple[int, float], ...]
    generator_params: FlowSpec | None = None
    clip_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "samples", tuple((int(t), float(v)) for t, v in self.samples)
        )
        ticks = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ParameterError("trace ticks must be strictly increasing")
        if any(v < 0 for _, v in self.samples):
            raise ParameterError("trace intensities must be >= 0")

    def intensities(self) -> np.ndarray:
        return np.array([v for _, v in self.samples], dtype=float)

    @property
    def mean_intensity(self) -> float:
        if not self.samples:
            return 0.0
        return float(self.intensities().mean())


def fgn_autocovariance(hurst: float, lag: int, sigma: float = 1.0) -> float:
    """Autocovariance of fractional Gaussian noise at an integer lag."""
    k = abs(lag)
    h2 = 2.0 * hurst
    return 0.5 * sigma * sigma * (
        abs(k + 1) ** h2 - 2.0 * abs(k) ** h2 + abs(k - 1) ** h2
    )


def generate_fgn(
    length: int, hurst: float, sigma: float = 1.0, seed: int = 0
) -> np.ndarray:
    """Sample a fractional Gaussian noise path by circulant embedding.

    The method is exact: the output is stationary Gaussian with autocovariance
    ``fgn_autocovariance(hurst, k, sigma)``. Identical arguments give an
    identical path.
    """
    if not 0 < hurst < 1:
        raise ParameterError("hurst must be in (0, 1)")
    if sigma <= 0:
        raise ParameterError("sigma must be > 0")
    if length < 0:
        raise ParameterError("length must be >= 0")
    if length == 0:
        return np.empty(0, dtype=float)
    rng = np.random.default_rng(seed)
    if length == 1:
        return rng.standard_normal(1) * sigma

    n = length
    lags = np.arange(n + 1, dtype=float)
    h2 = 2.0 * hurst
    gamma = 0.5 * (
        np.abs(lags + 1) ** h2 - 2.0 * np.abs(lags) ** h2 + np.abs(lags - 1) ** h2
    )
    row = np.concatenate([gamma, gamma[-2:0:-1]])  # circulant of size 2n
    eig = np.fft.fft(row).real
    if eig.min() < -1e-8 * eig.max():
        raise ParameterError(
            f"circulant embedding not positive semidefinite for H={hurst}, n={n}"
        )
    eig = np.clip(eig, 0.0, None)

    g1 = rng.standard_normal(n)
    g2 = rng.standard_normal(n)
    m = 2 * n
    w = np.zeros(m, dtype=complex)
    w[0] = np.sqrt(eig[0] / m) * g1[0]
    w[1:n] = np.sqrt(eig[1:n] / (2 * m)) * (g1[1:] + 1j * g2[1:])
    w[n] = np.sqrt(eig[n] / m) * g2[0]
    w[n + 1 :] = np.sqrt(eig[n + 1 :] / (2 * m)) * (g1[:0:-1] - 1j * g2[:0:-1])
    path = np.fft.fft(w)[:n].real
    return path * sigma


def generate_cascade(length: int, weight: float, seed: int = 0) -> np.ndarray:
    """Build a conservative binomial multiplicative cascade measure.

    Starting from total mass equal to ``length`` (so the mean value is 1),
    each interval's mass is split into fractions (weight, 1 - weight); which
    side receives the larger share is decided by a seeded fair coin at every
    node. The total mass is conserved exactly.
    """
    if length < 2 or length & (length - 1) != 0:
        raise ParameterError("length must be a power of two >= 2")
    if not 0.5 < weight < 1:
        raise ParameterError("weight must be in (0.5, 1)")
    rng = np.random.default_rng(seed)
    masses = np.array([float(length)])
    while masses.size < length:
        left_heavy = rng.integers(0, 2, size=masses.size).astype(bool)
        left_frac = np.where(left_heavy, weight, 1.0 - weight)
        left = masses * left_frac
        right = masses - left
        out = np.empty(2 * masses.size)
        out[0::2] = left
        out[1::2] = right
        masses = out
    return masses


def generate_trace(spec: FlowSpec, length: int, seed: int = 0) -> TrafficTrace:
    """Produce ``length`` ticks of intensity for one flow.

    fgn flows are shifted to the mean and clipped at zero; the clipped
    fraction is reported on the trace and logged when it is large enough to
    bias the Hurst structure.
    """
    if length < 0:
        raise ParameterError("length must be >= 0")
    clip_fraction = 0.0
    if spec.kind is FlowKind.FGN:
        noise = generate_fgn(length, spec.hurst_target, 1.0, seed)
        raw = spec.intensity_mean + spec.scale * noise
        clip_fraction = float(np.mean(raw < 0)) if length else 0.0
        values = np.maximum(raw, 0.0)
    elif spec.kind is FlowKind.CASCADE:
        n = 1
        while n < max(length, 2):
            n *= 2
        values = spec.intensity_mean * generate_cascade(n, spec.cascade_weight, seed)
        values = values[:length]
    else:
        values = np.full(length, spec.intensity_mean)
    if clip_fraction > 0.01:
        log.info(
            "flow %d: clipped %.2f%% of negative intensities",
            spec.flow_id,
            100 * clip_fraction,
        )
    samples = tuple((t, float(values[t])) for t in range(length))
    return TrafficTrace(
        flow_id=spec.flow_id,
        samples=samples,
        generator_params=spec,
        clip_fraction=clip_fraction,
    )


DemandPicker = Callable[[np.random.Generator, ServiceClass], ResourceDemand]


def _uniform_demand(rng: np.random.Generator, cls: ServiceClass) -> ResourceDemand:
    return cls.demand_profiles[int(rng.integers(0, len(cls.demand_profiles)))]


def trace_to_requests(
    trace: TrafficTrace,
    class_mix: Mapping[ServiceClass, float],
    demand_picker: DemandPicker | None = None,
    seed: int = 0,
    id_start: int = 0,
) -> list[Request]:
    """Expand a trace into requests: round(intensity) arrivals per tick, each
    assigned a class by a seeded categorical draw and a demand profile by the
    picker (seeded uniform choice by default)."""
    if not class_mix:
        raise ParameterError("class_mix must be non-empty")
    classes = list(class_mix.keys())
    probs = np.array([class_mix[c] for c in classes], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ParameterError("class_mix probabilities must sum to 1")
    if (probs < 0).any():
        raise ParameterError("class_mix probabilities must be >= 0")
    cumulative = np.cumsum(probs)
    picker = demand_picker or _uniform_demand
    rng = np.random.default_rng(seed)

    requests: list[Request] = []
    next_id = id_start
    for tick, intensity in trace.samples:
        count = int(np.rint(intensity))
        for _ in range(count):
            cls = classes[int(np.searchsorted(cumulative, rng.random(), side="right"))]
            demand = picker(rng, cls)
            requests.append(
                Request(
                    id=next_id,
                    service_class=cls,
                    demand=demand,
                    arrival=tick,
                    lifetime=cls.lifetime,
                    service_duration=cls.service_duration,
                )
            )
            next_id += 1
    return requests


def write_trace(trace: TrafficTrace, path: str | Path) -> None:
    """Write a trace as `tick,intensity` lines with 9 fractional digits."""
    lines = [TRACE_HEADER]
    lines.extend(f"{t},{v:.9f}" for t, v in trace.samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path, flow_id: int = 0) -> TrafficTrace:
    """Read a trace written by :func:`write_trace`."""
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != TRACE_HEADER:
        raise ParameterError(f"trace file must start with header '{TRACE_HEADER}'")
    samples = []
    for i, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise ParameterError(f"line {i}: expected 'tick,intensity'")
        samples.append((int(parts[0]), float(parts[1])))
    return TrafficTrace(flow_id=flow_id, samples=tuple(samples))
