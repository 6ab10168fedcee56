"""
Domain Models for Accelerator Flows
Flows, traffic patterns, paths, SLOs and accelerator timing models, plus the pure
functions that evaluate accelerator throughput for a traffic mix
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from . import settings
from .validators import ConfigurationError

FlowId = int


class Direction(str, Enum):
    H2D = 'h2d'
    D2H = 'd2h'
    P2P = 'p2p'


class PathMode(str, Enum):
    """
    Logical route of invocation traffic. Each mode maps to an
    (ingress, egress) pair of interconnect directions; None means the leg
    stays off the host interconnect (NIC side)
    """
    FUNCTION_CALL = 'function_call'
    INLINE_NIC_TX = 'inline_nic_tx'
    INLINE_NIC_RX = 'inline_nic_rx'
    INLINE_P2P = 'inline_p2p'

    @property
    def legs(self):
        return _PATH_LEGS[self]


_PATH_LEGS = {
    PathMode.FUNCTION_CALL: (Direction.H2D, Direction.D2H),
    PathMode.INLINE_NIC_RX: (None, Direction.D2H),
    PathMode.INLINE_NIC_TX: (Direction.H2D, None),
    PathMode.INLINE_P2P: (Direction.P2P, Direction.P2P),
}

PATH_MODE_CHOICES = [
    (PathMode.FUNCTION_CALL.value, 'Function Call'),
    (PathMode.INLINE_NIC_TX.value, 'Inline (NIC) TX'),
    (PathMode.INLINE_NIC_RX.value, 'Inline (NIC) RX'),
    (PathMode.INLINE_P2P.value, 'Inline (P2P)'),
]


class SloMetric(str, Enum):
    THROUGHPUT_GBPS = 'throughput_gbps'
    THROUGHPUT_IOPS = 'throughput_iops'
    TAIL_LATENCY = 'tail_latency'


SLO_METRIC_CHOICES = [
    (SloMetric.THROUGHPUT_GBPS.value, 'Throughput (Gbps)'),
    (SloMetric.THROUGHPUT_IOPS.value, 'Throughput (IOPS)'),
    (SloMetric.TAIL_LATENCY.value, 'Tail latency (ns)'),
]

SIZE_DIST_CHOICES = [
    ('fixed', 'Fixed'),
    ('uniform', 'Uniform'),
    ('bimodal', 'Bi-modal'),
]

SERVICE_DIST_CHOICES = SIZE_DIST_CHOICES + [('poisson', 'Poisson')]

INJECTION_CHOICES = [
    ('poisson', 'Poisson process'),
    ('fixed', 'Fixed gap'),
]

ARBITER_CHOICES = [
    ('rr', 'Round robin'),
    ('wrr', 'Weighted round robin'),
    ('priority', 'Priority'),
    ('wfq', 'Weighted fair queuing'),
]

MODE_ARCUS = 'arcus'
MODE_BASELINE_RR = 'baseline-rr'
MODE_BASELINE_WRR = 'baseline-wrr'
MODE_BASELINE_PRIORITY = 'baseline-priority'
MODE_BASELINE_WFQ = 'baseline-wfq'
MODE_BASELINE_SOFT = 'baseline-soft-shaper'

MODE_CHOICES = [
    (MODE_ARCUS, 'Per-flow hardware shaping with SLO control plane'),
    (MODE_BASELINE_RR, 'Unshaped, round-robin port'),
    (MODE_BASELINE_WRR, 'Unshaped, weighted round-robin port'),
    (MODE_BASELINE_PRIORITY, 'Unshaped, priority port'),
    (MODE_BASELINE_WFQ, 'Unshaped, weighted fair queuing port'),
    (MODE_BASELINE_SOFT, 'Jittery software token bucket'),
]

# Baseline modes and the port policy they imply
MODE_ARBITERS = {
    MODE_ARCUS: 'rr',
    MODE_BASELINE_RR: 'rr',
    MODE_BASELINE_WRR: 'wrr',
    MODE_BASELINE_PRIORITY: 'priority',
    MODE_BASELINE_WFQ: 'wfq',
    MODE_BASELINE_SOFT: 'rr',
}


@dataclass(frozen=True)
class SizeDistribution:
    """Message-size distribution in bytes"""
    kind: str = 'fixed'
    size: int = 1500
    low: int = 0
    high: int = 0
    small: int = 0
    large: int = 0
    p_small: float = 0.5

    def __post_init__(self):
        if self.kind not in dict(SIZE_DIST_CHOICES):
            raise ConfigurationError(f'Unknown size distribution {self.kind!r}')
        if any(s <= 0 for s in self.support_bounds()):
            raise ConfigurationError('Message sizes must be positive', code='size')

    def support_bounds(self):
        if self.kind == 'fixed':
            return (self.size, self.size)
        if self.kind == 'uniform':
            return (self.low, self.high)
        return (self.small, self.large)

    @property
    def mean(self):
        if self.kind == 'fixed':
            return float(self.size)
        if self.kind == 'uniform':
            return (self.low + self.high) / 2
        return self.p_small * self.small + (1 - self.p_small) * self.large

    @property
    def max_size(self):
        return max(self.support_bounds())

    @property
    def min_size(self):
        return min(self.support_bounds())

    @property
    def representative_size(self):
        """Size used for profile keys: the mean rounded to whole bytes"""
        return int(round(self.mean))

    def draw(self, rng, n):
        """Draw n sizes as a numpy int array"""
        if self.kind == 'fixed':
            return rng.integers(self.size, self.size + 1, size=n)
        if self.kind == 'uniform':
            return rng.integers(self.low, self.high + 1, size=n)
        coin = rng.random(size=n) < self.p_small
        return (coin * self.small + (~coin) * self.large).astype(int)


@dataclass(frozen=True)
class TrafficPattern:
    msg_size_dist: SizeDistribution = field(default_factory=SizeDistribution)
    load: float = 0.1
    burstiness: int = 1
    injection: str = 'poisson'

    def __post_init__(self):
        if not 0 <= self.load <= 1:
            raise ConfigurationError(f'Load {self.load} is outside [0, 1]', code='load')
        if self.burstiness < 1:
            raise ConfigurationError('Burstiness must be at least 1', code='burstiness')
        if self.injection not in dict(INJECTION_CHOICES):
            raise ConfigurationError(f'Unknown injection process {self.injection!r}')

    def offered_gbps(self, reference_gbps):
        return self.load * reference_gbps


@dataclass(frozen=True)
class SloTarget:
    metric: SloMetric = SloMetric.THROUGHPUT_GBPS
    value: float = 1.0
    percentile: float = 0.99
    window_requests: int = settings.WINDOW_REQUESTS

    def __post_init__(self):
        if self.value <= 0:
            raise ConfigurationError('SLO value must be positive', code='slo')
        if not 0 < self.percentile < 1:
            raise ConfigurationError('SLO percentile must be in (0, 1)', code='slo')

    @property
    def is_throughput(self):
        return self.metric in (SloMetric.THROUGHPUT_GBPS, SloMetric.THROUGHPUT_IOPS)


@dataclass(frozen=True)
class EgressRatio:
    """R = egress bytes / ingress bytes, or a fixed output size"""
    kind: str = 'proportional'
    ratio: float = 1.0
    fixed_bytes: int = 0

    def __post_init__(self):
        if self.kind == 'proportional' and self.ratio <= 0:
            raise ConfigurationError('Proportional ratio must be positive', code='egress')
        if self.kind == 'fixed_output' and self.fixed_bytes <= 0:
            raise ConfigurationError('Fixed output size must be positive', code='egress')
        if self.kind not in ('proportional', 'fixed_output'):
            raise ConfigurationError(f'Unknown egress ratio {self.kind!r}')

    @classmethod
    def proportional(cls, ratio):
        return cls(kind='proportional', ratio=ratio)

    @classmethod
    def fixed_output(cls, num_bytes):
        return cls(kind='fixed_output', fixed_bytes=num_bytes)


@dataclass(frozen=True)
class ServiceTimeDistribution:
    """Per-message compute latency in cycles"""
    kind: str = 'fixed'
    cycles: int = 0
    low: int = 0
    high: int = 0
    small: int = 0
    large: int = 0
    p_small: float = 0.5
    mean: float = 0.0

    def __post_init__(self):
        if self.kind not in dict(SERVICE_DIST_CHOICES):
            raise ConfigurationError(f'Unknown service time distribution {self.kind!r}')

    @property
    def is_zero(self):
        return self.kind == 'fixed' and self.cycles == 0

    def draw(self, rng):
        if self.kind == 'fixed':
            return self.cycles
        if self.kind == 'uniform':
            return int(rng.integers(self.low, self.high + 1))
        if self.kind == 'bimodal':
            return self.small if rng.random() < self.p_small else self.large
        return int(rng.poisson(self.mean))


@dataclass(frozen=True)
class AcceleratorModel:
    """
    Heterogeneous compute model: piecewise-linear throughput-vs-size curve,
    egress/ingress ratio and a per-message service-time distribution
    """
    acc_id: str
    capacity_curve: Tuple[Tuple[int, float], ...]
    egress_ratio: EgressRatio = field(default_factory=EgressRatio)
    service_time_dist: ServiceTimeDistribution = field(default_factory=ServiceTimeDistribution)
    max_capacity_gbps: Optional[float] = None

    def __post_init__(self):
        if not self.capacity_curve:
            raise ConfigurationError('Capacity curve is empty', code='empty-curve')
        if any(s != int(s) for s, _g in self.capacity_curve):
            raise ConfigurationError('Curve knot sizes must be whole bytes', code='curve-size')
        knots = tuple(sorted((int(s), float(g)) for s, g in self.capacity_curve))
        if any(g <= 0 or s <= 0 for s, g in knots):
            raise ConfigurationError('Curve knots must be positive', code='curve-knot')
        if len({s for s, _g in knots}) != len(knots):
            raise ConfigurationError('Curve knot sizes must be distinct', code='curve-order')
        object.__setattr__(self, 'capacity_curve', knots)
        peak = max(g for _s, g in knots)
        if self.max_capacity_gbps is None:
            object.__setattr__(self, 'max_capacity_gbps', peak)
        elif peak > self.max_capacity_gbps:
            raise ConfigurationError('Curve exceeds max_capacity_gbps', code='curve-peak')

    @property
    def domain(self):
        return (self.capacity_curve[0][0], self.capacity_curve[-1][0])

    def egress_size(self, ingress_bytes):
        return egress_size(self, ingress_bytes)

    def curve_throughput(self, msg_size):
        return curve_throughput(self, msg_size)


@dataclass(frozen=True)
class FlowSpec:
    """One VM's stream of accelerator invocations on one path"""
    flow_id: FlowId
    vm_id: str
    acc_id: str
    path: PathMode
    pattern: TrafficPattern
    slo: SloTarget
    priority: int = 0
    weight: int = 1
    start_cycle: int = 0
    stop_cycle: Optional[int] = None

    def demand_gbps(self, reference_gbps):
        """
        Throughput the flow's SLO asks for, in Gbps. Latency SLOs ask for
        the pattern's offered rate
        """
        if self.slo.metric == SloMetric.THROUGHPUT_GBPS:
            return self.slo.value
        if self.slo.metric == SloMetric.THROUGHPUT_IOPS:
            return self.slo.value * self.pattern.msg_size_dist.mean * 8 / 1e9
        return self.pattern.offered_gbps(reference_gbps)


@dataclass(frozen=True)
class ChannelConfig:
    """Full-duplex interconnect with a shared credit pool"""
    bw_h2d_gbps: float = 64.0
    bw_d2h_gbps: float = 64.0
    credits: int = settings.CREDITS
    tlp_bytes: int = settings.TLP_BYTES
    bw_p2p_gbps: Optional[float] = None
    tlp_overhead_bytes: int = 0

    def __post_init__(self):
        if self.bw_h2d_gbps <= 0 or self.bw_d2h_gbps <= 0:
            raise ConfigurationError('Channel bandwidths must be positive', code='channel')
        if self.credits < 1:
            raise ConfigurationError('Channel needs at least one credit', code='channel')
        if self.tlp_bytes <= 0:
            raise ConfigurationError('TLP granule must be positive', code='channel')

    def bandwidth(self, direction):
        if direction == Direction.H2D:
            return self.bw_h2d_gbps
        if direction == Direction.D2H:
            return self.bw_d2h_gbps
        return self.bw_p2p_gbps if self.bw_p2p_gbps is not None else self.bw_d2h_gbps


@dataclass(frozen=True)
class PortConfig:
    """Device-side buffering at each accelerator port"""
    buffer: int = settings.PORT_BUFFER
    flow_depth: int = settings.PORT_BUFFER
    host_depth: int = settings.HOST_QUEUE_DEPTH
    egress_depth: int = settings.EGRESS_QUEUE_DEPTH


@dataclass(frozen=True)
class ArbiterPolicy:
    kind: str = 'rr'
    weights: Dict[FlowId, int] = field(default_factory=dict)
    levels: Dict[FlowId, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in dict(ARBITER_CHOICES):
            raise ConfigurationError(f'Unknown arbiter policy {self.kind!r}')
        if any(w <= 0 for w in self.weights.values()):
            raise ConfigurationError('Arbiter weights must be positive', code='weights')


@dataclass(frozen=True)
class AccPath:
    """One location through which an accelerator can be reached"""
    path_id: str
    location: str
    mode: PathMode


@dataclass(frozen=True)
class ControlConfig:
    tick_us: float = settings.CONTROL_TICK_US
    damping_ticks: int = settings.VIOLATION_DAMPING_TICKS
    hysteresis: float = settings.PATH_HYSTERESIS
    slo_tolerance: float = settings.SLO_TOLERANCE
    reconfig_latency_cycles: int = settings.RECONFIG_LATENCY_CYCLES


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    accelerators: Tuple[AcceleratorModel, ...]
    flows: Tuple[FlowSpec, ...]
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    port: PortConfig = field(default_factory=PortConfig)
    mode: str = MODE_ARCUS
    seed: int = 1
    duration_cycles: int = 250_000
    reference_gbps: float = 100.0
    cycle_ns: int = settings.CYCLE_NS
    acc_paths: Dict[str, Tuple[AccPath, ...]] = field(default_factory=dict)
    control: ControlConfig = field(default_factory=ControlConfig)
    soft_timer_ns: int = settings.SOFT_TIMER_NS
    soft_jitter_ns: int = settings.SOFT_JITTER_NS
    profile: Optional[str] = None
    description: str = ''

    def accelerator(self, acc_id):
        for model in self.accelerators:
            if model.acc_id == acc_id:
                return model
        return None

    @property
    def arbiter(self):
        weights = {f.flow_id: f.weight for f in self.flows}
        levels = {f.flow_id: f.priority for f in self.flows}
        return ArbiterPolicy(kind=MODE_ARBITERS[self.mode], weights=weights, levels=levels)


def egress_size(model, ingress_bytes):
    """
    Bytes the accelerator emits for one ingress message

    Proportional(r) rounds r * ingress half-up with a floor of 1 byte;
    FixedOutput(b) always emits b bytes
    """
    if ingress_bytes <= 0:
        raise ConfigurationError('Ingress size must be positive', code='size')
    ratio = model.egress_ratio
    if ratio.kind == 'fixed_output':
        return ratio.fixed_bytes
    return max(1, int(math.floor(ratio.ratio * ingress_bytes + 0.5)))


def curve_throughput(model, msg_size):
    """
    Max throughput (Gbps) at msg_size by piecewise-linear interpolation
    between knots, clamped to the endpoint knots outside the domain
    """
    knots = model.capacity_curve
    if not knots:
        raise ConfigurationError('Capacity curve is empty', code='empty-curve')

    sizes, gbps = zip(*knots)
    return float(np.interp(msg_size, sizes, gbps))


def effective_capacity(model, mix):
    """
    Aggregate throughput the accelerator sustains for a traffic mix

    Time-share (harmonic) composition: every stream consumes accelerator time
    in proportion to offered / curve(size)

    Args:
        model (AcceleratorModel): accelerator
        mix (list): (msg_size, offered_gbps) pairs

    Returns:
        float: Gbps, capped at max_capacity_gbps
    """
    if not mix:
        raise ConfigurationError('Traffic mix is empty', code='empty-mix')

    lo, hi = model.domain
    for size, offered in mix:
        if size < lo or size > hi:
            raise ConfigurationError(
                f'Message size {size} outside curve domain {lo}..{hi}', code='curve-domain')
        if offered < 0:
            raise ConfigurationError('Offered load must be non-negative', code='load')

    weights = [offered for _s, offered in mix]
    if sum(weights) == 0:
        weights = [1.0] * len(mix)

    time_share = sum(w / curve_throughput(model, size) for (size, _o), w in zip(mix, weights))
    return min(model.max_capacity_gbps, sum(weights) / time_share)
