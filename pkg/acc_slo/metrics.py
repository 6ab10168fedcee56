"""
Metrics Pipeline
Per-flow recorders (windowed throughput samples, latency population, drops)
and assembly of the MetricsReport document
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import settings
from .models import Direction, SloMetric
from .utils import cdf_points, nearest_rank

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 'acc-slo-report/1'
LATENCY_PERCENTILES = (('p50', 0.50), ('p95', 0.95), ('p99', 0.99), ('p99.9', 0.999))
SAMPLE_PERCENTILES = (('p25', 0.25), ('p50', 0.50), ('p75', 0.75), ('p99', 0.99))


class FlowMetrics:
    """
    Recorder for one flow

    A throughput sample is taken every window_requests completed requests and
    spans from the end of the previous window, so consecutive samples tile
    the timeline. Latency is injection to completion write, per request.
    """

    def __init__(self, flow_id, window_requests, cycle_ns):
        self.flow_id = flow_id
        self.window_requests = window_requests
        self.cycle_ns = cycle_ns
        self.injected = 0
        self.injected_bytes = 0
        self.completed = 0
        self.completed_bytes = 0
        self.host_drops = 0
        self.device_drops = 0
        self.latencies_ns = []
        self.samples = []
        self.active_from = None
        self.measure_from = 0
        self.measure_to = None
        self.measured_bytes = 0
        self.measured_requests = 0
        self.measure_mid = 0
        self.half_bytes = [0, 0]
        self._window_count = 0
        self._window_bytes = 0
        self._window_start = 0
        self._recent = deque(maxlen=window_requests + 1)

    @property
    def dropped(self):
        return self.host_drops + self.device_drops

    def activate(self, now, end_cycle):
        """Flow starts injecting; the first WARMUP_FRACTION of its span is not measured"""
        self.active_from = now
        self._window_start = now
        self.measure_from = now + int((end_cycle - now) * settings.WARMUP_FRACTION)
        self.measure_to = end_cycle
        self.measure_mid = (self.measure_from + end_cycle) // 2

    def on_inject(self, size):
        self.injected += 1
        self.injected_bytes += size

    def on_drop(self, where):
        if where == 'host':
            self.host_drops += 1
        else:
            self.device_drops += 1

    def on_segment(self, num_bytes, now):
        self.completed_bytes += num_bytes
        if self.measure_from <= now <= (self.measure_to or now):
            self.measured_bytes += num_bytes
            self.half_bytes[0 if now < self.measure_mid else 1] += num_bytes

    def on_complete(self, size, injected_at, now):
        self.completed += 1
        latency_ns = (now - injected_at) * self.cycle_ns
        self.latencies_ns.append(latency_ns)
        if self.measure_from <= now <= (self.measure_to or now):
            self.measured_requests += 1
        self._recent.append((now, size, latency_ns))

        self._window_count += 1
        self._window_bytes += size
        if self._window_count == self.window_requests:
            span_ns = max(1, (now - self._window_start) * self.cycle_ns)
            self.samples.append({
                'end_cycle': now,
                'gbps': self._window_bytes * 8 / span_ns,
                'iops': self._window_count * 1e9 / span_ns,
            })
            self._window_start = now
            self._window_count = 0
            self._window_bytes = 0

    def recent_rate(self, now):
        """
        (Gbps, IOPS) over the most recent window_requests completions,
        ending at now so a stalled flow reads low. None before a full window.
        """
        if len(self._recent) <= self.window_requests:
            return None
        start = self._recent[0][0]
        span_ns = max(1, (now - start) * self.cycle_ns)
        window = list(self._recent)[1:]
        total = sum(size for _c, size, _l in window)
        return total * 8 / span_ns, len(window) * 1e9 / span_ns

    def recent_latency(self, percentile):
        if len(self._recent) <= self.window_requests:
            return None
        return nearest_rank([lat for _c, _s, lat in list(self._recent)[1:]], percentile)

    def measured_rate(self, end_cycle):
        """(Gbps, IOPS) delivered over the measurement interval"""
        if self.active_from is None:
            return 0.0, 0.0
        end = min(end_cycle, self.measure_to or end_cycle)
        span_ns = (end - self.measure_from) * self.cycle_ns
        if span_ns <= 0:
            return 0.0, 0.0
        return self.measured_bytes * 8 / span_ns, self.measured_requests * 1e9 / span_ns

    def latency_percentiles(self):
        return {name: nearest_rank(self.latencies_ns, p) for name, p in LATENCY_PERCENTILES}

    def sample_values(self, metric):
        key = 'iops' if metric == SloMetric.THROUGHPUT_IOPS else 'gbps'
        return [s[key] for s in self.samples]


def attainment(spec, delivered_gbps, delivered_iops, offered_gbps, latency_at_slo, shaped,
               tolerance=settings.SLO_TOLERANCE):
    """
    SLO attainment of one flow

    Throughput flows attain when delivered >= (1 - tol) * min(SLO, offered);
    shaped flows must also stay below (1 + tol) * SLO. Latency flows attain
    when the SLO percentile of the latency population is within the bound.
    """
    slo = spec.slo
    if slo.metric == SloMetric.TAIL_LATENCY:
        met = latency_at_slo is not None and latency_at_slo <= slo.value
        return {'metric': slo.metric.value, 'target': slo.value, 'delivered': latency_at_slo,
                'ratio': (latency_at_slo / slo.value) if latency_at_slo is not None else None, 'met': met}

    if slo.metric == SloMetric.THROUGHPUT_IOPS:
        offered = offered_gbps * 1e9 / (8 * spec.pattern.msg_size_dist.mean)
        delivered = delivered_iops
    else:
        offered = offered_gbps
        delivered = delivered_gbps
    target = min(slo.value, offered)
    met = target == 0 or delivered >= (1 - tolerance) * target
    if shaped:
        met = met and delivered <= (1 + tolerance) * slo.value
    return {'metric': slo.metric.value, 'target': target, 'delivered': delivered,
            'ratio': delivered / target if target else None, 'met': bool(met)}


def sample_deviations(values, target):
    """Relative deviation of windowed-sample percentiles from the SLO target"""
    if not values or not target:
        return {name: None for name, _p in SAMPLE_PERCENTILES}
    return {name: (nearest_rank(values, p) - target) / target for name, p in SAMPLE_PERCENTILES}


def fairness(delivered):
    """Min/max ratio and Jain's index over delivered throughputs"""
    values = np.asarray([v for v in delivered if v is not None], dtype=float)
    if len(values) == 0 or values.max() <= 0:
        return {'min_max_ratio': None, 'jain_index': None}
    jain = float(values.sum() ** 2 / (len(values) * (values ** 2).sum()))
    return {'min_max_ratio': float(values.min() / values.max()), 'jain_index': jain}


@dataclass
class MetricsReport:
    scenario: str
    mode: str
    seed: int
    duration_cycles: int
    cycle_ns: int
    flows: list = field(default_factory=list)
    fairness: dict = field(default_factory=dict)
    utilization: dict = field(default_factory=dict)
    accelerators: list = field(default_factory=list)
    control_log: list = field(default_factory=list)
    status_log: list = field(default_factory=list)
    register_audit: list = field(default_factory=list)
    engine: dict = field(default_factory=dict)
    flow_state_size: int = 0

    def flow(self, flow_id):
        for entry in self.flows:
            if entry['flow_id'] == flow_id:
                return entry
        raise KeyError(flow_id)

    def as_dict(self):
        return {
            'schema': REPORT_SCHEMA,
            'scenario': self.scenario,
            'mode': self.mode,
            'seed': self.seed,
            'duration_cycles': self.duration_cycles,
            'cycle_ns': self.cycle_ns,
            'flows': self.flows,
            'fairness': self.fairness,
            'utilization': self.utilization,
            'accelerators': self.accelerators,
            'control_log': self.control_log,
            'status_log': self.status_log,
            'register_audit': self.register_audit,
            'engine': self.engine,
            'flow_state_size': self.flow_state_size,
        }

    @classmethod
    def from_dict(cls, document):
        data = {key: document[key] for key in (
            'scenario', 'mode', 'seed', 'duration_cycles', 'cycle_ns', 'flows', 'fairness',
            'utilization', 'accelerators', 'control_log', 'status_log', 'register_audit',
            'engine', 'flow_state_size') if key in document}
        return cls(**data)


def flow_entry(runtime, end_cycle, shaped, reference_gbps):
    """Report record for one flow runtime"""
    spec = runtime.spec
    recorder = runtime.metrics
    delivered_gbps, delivered_iops = recorder.measured_rate(end_cycle)
    offered_gbps = spec.pattern.offered_gbps(reference_gbps) if runtime.admitted else 0.0
    latency_at_slo = nearest_rank(recorder.latencies_ns, spec.slo.percentile)
    samples = recorder.sample_values(spec.slo.metric)
    target = spec.slo.value if spec.slo.is_throughput else None

    entry = {
        'flow_id': spec.flow_id,
        'vm_id': spec.vm_id,
        'acc_id': spec.acc_id,
        'path': runtime.path.value,
        'admitted': runtime.admitted,
        'reject_reason': runtime.reject_reason,
        'slo': {'metric': spec.slo.metric.value, 'value': spec.slo.value,
                'percentile': spec.slo.percentile},
        'demand_gbps': spec.demand_gbps(reference_gbps),
        'offered_gbps': offered_gbps,
        'injected': recorder.injected,
        'completed': recorder.completed,
        'dropped': recorder.dropped,
        'drops': {'host': recorder.host_drops, 'device': recorder.device_drops},
        'in_flight': recorder.injected - recorder.completed - recorder.dropped,
        'delivered_gbps': delivered_gbps,
        'delivered_iops': delivered_iops,
        'latency_ns': recorder.latency_percentiles(),
        'slo_percentile_latency_ns': latency_at_slo,
        'samples': recorder.samples,
        'sample_deviation': sample_deviations(samples, target),
        'cdf': [[v, f] for v, f in cdf_points(samples)],
        'persistently_violating': runtime.persistently_violating,
        'registers': runtime.shaper.regs.as_dict() if runtime.shaper is not None else None,
    }
    if runtime.admitted:
        entry['attainment'] = attainment(spec, delivered_gbps, delivered_iops, offered_gbps,
                                         latency_at_slo, shaped)
    else:
        entry['attainment'] = None
    return entry


def utilization_entry(interconnect, elapsed_cycles):
    return {direction.value: interconnect.utilization(direction, elapsed_cycles) for direction in Direction}
