"""
Offline Contention Profiler
Sweeps traffic-pattern x path x system-setting combinations against an
accelerator model and records Capacity(t,X,N) per combination
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from typing import Tuple

from . import settings
from .models import (
    MODE_BASELINE_RR,
    ChannelConfig,
    FlowSpec,
    PathMode,
    PortConfig,
    ScenarioSpec,
    SizeDistribution,
    SloMetric,
    SloTarget,
    TrafficPattern,
)
from .validators import ConfigurationError

logger = logging.getLogger(__name__)

ARTIFACT_SCHEMA = 'acc-slo-profile/1'
# Largest role is re-sized to its co-runner's size once it is this many times larger
RESIZE_RATIO = 4


class ProfileTag(str, Enum):
    SLO_FRIENDLY = 'slo-friendly'
    SLO_VIOLATING = 'slo-violating'


@dataclass(frozen=True, order=True)
class RoleKey:
    """One position in a pattern combination"""
    size: int
    load: float
    path: str

    def label(self):
        return f'{self.size}@{self.load:.3f}/{self.path}'


@dataclass(frozen=True)
class ProfileKey:
    acc_id: str
    roles: Tuple[RoleKey, ...]
    setting: str

    def __post_init__(self):
        object.__setattr__(self, 'roles', tuple(sorted(self.roles)))

    @property
    def path_key(self):
        return tuple(role.path for role in self.roles)

    def as_string(self):
        return f"{self.acc_id}|{';'.join(role.label() for role in self.roles)}|{self.setting}"


@dataclass(frozen=True)
class CapacityProfile:
    """Measured capacity of one combination, per-role values aligned with the sorted roles"""
    total_gbps: float
    shares: Tuple[float, ...]
    offered: Tuple[float, ...]
    sizes: Tuple[int, ...]
    saturated: bool = False
    low_confidence: bool = False
    size_bound: int = 0

    def as_dict(self):
        return {
            'total_gbps': self.total_gbps,
            'shares': list(self.shares),
            'offered': list(self.offered),
            'sizes': list(self.sizes),
            'saturated': self.saturated,
            'low_confidence': self.low_confidence,
            'size_bound': self.size_bound,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            total_gbps=float(data['total_gbps']),
            shares=tuple(float(v) for v in data['shares']),
            offered=tuple(float(v) for v in data['offered']),
            sizes=tuple(int(v) for v in data['sizes']),
            saturated=bool(data.get('saturated', False)),
            low_confidence=bool(data.get('low_confidence', False)),
            size_bound=int(data.get('size_bound', 0)),
        )


def setting_key(channel, port):
    """System-setting part of a profile key"""
    p2p = channel.bw_p2p_gbps if channel.bw_p2p_gbps is not None else channel.bw_d2h_gbps
    return (f'h2d{channel.bw_h2d_gbps:g}-d2h{channel.bw_d2h_gbps:g}-p2p{p2p:g}'
            f'-cr{channel.credits}-tlp{channel.tlp_bytes}-buf{port.buffer}x{port.flow_depth}')


def quantize_load(load):
    """Loads are keyed at 0.001 resolution, rounded up"""
    return math.ceil(round(load * 1000, 6)) / 1000


def role_demand_gbps(slo, size, offered_gbps):
    """Demand of one role in Gbps"""
    if slo.metric == SloMetric.THROUGHPUT_GBPS:
        return slo.value
    if slo.metric == SloMetric.THROUGHPUT_IOPS:
        return slo.value * size * 8 / 1e9
    return offered_gbps


def classify(profile, slos, tolerance=0.0):
    """
    SloFriendly iff each role's achievable share covers its SLO demand

    Args:
        profile (CapacityProfile): measured combination
        slos (list): one SloTarget per role, in role order
        tolerance (float): relative slack granted to the share

    Raises:
        ConfigurationError: role/SLO count mismatch
    """
    if not slos:
        return ProfileTag.SLO_FRIENDLY
    if len(slos) != len(profile.shares):
        raise ConfigurationError(
            f'{len(slos)} SLOs for a {len(profile.shares)}-role combination', code='role-mismatch')
    for slo, share, size, offered in zip(slos, profile.shares, profile.sizes, profile.offered):
        if share < role_demand_gbps(slo, size, offered) * (1 - tolerance):
            return ProfileTag.SLO_VIOLATING
    return ProfileTag.SLO_FRIENDLY


class ProfileTable:
    """
    Profile entries keyed by (accelerator, pattern combination, path
    combination, system setting)

    Unseen combinations resolve to the nearest profiled one with the same
    role count, path combination and setting: closest log2 sizes, loads at or
    above the query preferred, ties to the lower capacity.
    """

    def __init__(self, entries=None):
        self.entries = dict(entries or {})

    def __len__(self):
        return len(self.entries)

    def __contains__(self, key):
        return key in self.entries

    def add(self, key, profile):
        self.entries[key] = profile

    def get(self, key):
        return self.entries.get(key)

    def accelerators(self):
        return sorted({key.acc_id for key in self.entries})

    def lookup(self, acc_id, roles, setting):
        """
        Returns:
            tuple: (ProfileKey, CapacityProfile) or None when no entry shares
            the accelerator, role count, path combination and setting
        """
        query = ProfileKey(acc_id, tuple(roles), setting)
        exact = self.entries.get(query)
        if exact is not None:
            return query, exact

        candidates = [
            key for key in self.entries
            if key.acc_id == acc_id and key.setting == setting
            and len(key.roles) == len(query.roles) and key.path_key == query.path_key
        ]
        if not candidates:
            return None

        covering = [key for key in candidates
                    if all(c.load >= q.load for c, q in zip(key.roles, query.roles))]
        pool = covering or candidates

        def distance(key):
            size_gap = sum(abs(math.log2(c.size) - math.log2(q.size)) for c, q in zip(key.roles, query.roles))
            load_gap = sum(abs(c.load - q.load) for c, q in zip(key.roles, query.roles))
            smaller = sum(c.size for c in key.roles)
            return (round(size_gap, 9), round(load_gap, 9), smaller, self.entries[key].total_gbps)

        best = min(pool, key=distance)
        return best, self.entries[best]

    def to_document(self):
        rows = []
        for key in sorted(self.entries, key=lambda k: k.as_string()):
            rows.append({
                'acc_id': key.acc_id,
                'roles': [{'size': r.size, 'load': r.load, 'path': r.path} for r in key.roles],
                'setting': key.setting,
                'profile': self.entries[key].as_dict(),
            })
        return {'schema': ARTIFACT_SCHEMA, 'entries': rows}

    @classmethod
    def from_document(cls, document):
        if document.get('schema') != ARTIFACT_SCHEMA:
            raise ConfigurationError(
                f"Unsupported profile schema {document.get('schema')!r}", code='profile-schema')
        table = cls()
        for row in document.get('entries', []):
            roles = tuple(RoleKey(int(r['size']), float(r['load']), r['path']) for r in row['roles'])
            table.add(ProfileKey(row['acc_id'], roles, row['setting']), CapacityProfile.from_dict(row['profile']))
        return table

    def merge(self, other):
        self.entries.update(other.entries)
        return self


@dataclass(frozen=True)
class ProfilePoint:
    acc_id: str
    roles: Tuple[RoleKey, ...]
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    port: PortConfig = field(default_factory=PortConfig)
    reference_gbps: float = 100.0
    run_cycles: int = settings.PROFILE_RUN_CYCLES
    seed: int = 1
    cycle_ns: int = settings.CYCLE_NS

    @property
    def key(self):
        return ProfileKey(self.acc_id, self.roles, setting_key(self.channel, self.port))


@dataclass(frozen=True)
class SweepPlan:
    """
    Homogeneous grid (sizes x loads x flow counts x paths x settings) plus
    optional explicit mixes, each mix a tuple of RoleKeys
    """
    acc_id: str
    sizes: Tuple[int, ...] = tuple(settings.PROFILE_SIZES)
    loads: Tuple[float, ...] = tuple(settings.PROFILE_LOADS)
    flow_counts: Tuple[int, ...] = (1, 2)
    paths: Tuple[str, ...] = (PathMode.FUNCTION_CALL.value,)
    system_settings: Tuple[Tuple[ChannelConfig, PortConfig], ...] = ((ChannelConfig(), PortConfig()),)
    mixes: Tuple[Tuple[RoleKey, ...], ...] = ()
    run_cycles: int = settings.PROFILE_RUN_CYCLES
    reference_gbps: float = 100.0
    seed: int = 1
    cycle_ns: int = settings.CYCLE_NS

    def __post_init__(self):
        grid = (self.sizes, self.loads, self.flow_counts, self.paths)
        if not self.mixes and not all(grid):
            raise ConfigurationError('Sweep grids must be non-empty', code='empty-grid')
        if not self.system_settings:
            raise ConfigurationError('Sweep needs at least one system setting', code='empty-grid')
        if self.run_cycles < 1000 * settings.DEFAULT_INTERVAL_CYCLES:
            raise ConfigurationError(
                f'Run length {self.run_cycles} is below 1000 shaper intervals', code='run-length')

    def points(self):
        points = []
        for channel, port in self.system_settings:
            common = dict(channel=channel, port=port, reference_gbps=self.reference_gbps,
                          run_cycles=self.run_cycles, seed=self.seed, cycle_ns=self.cycle_ns)
            if all((self.sizes, self.loads, self.flow_counts, self.paths)):
                for path, count, size, load in product(self.paths, self.flow_counts, self.sizes, self.loads):
                    roles = (RoleKey(size, quantize_load(load), path),) * count
                    points.append(ProfilePoint(self.acc_id, roles, **common))
            for mix in self.mixes:
                points.append(ProfilePoint(self.acc_id, tuple(mix), **common))
        return points


def point_scenario(point, accelerator):
    """Unshaped fixed-gap scenario that drives every role at its profiled load"""
    flows = []
    for index, role in enumerate(sorted(point.roles), start=1):
        pattern = TrafficPattern(
            msg_size_dist=SizeDistribution(kind='fixed', size=role.size),
            load=role.load,
            injection='fixed',
        )
        offered = max(role.load * point.reference_gbps, 1e-3)
        flows.append(FlowSpec(
            flow_id=index,
            vm_id=f'role{index}',
            acc_id=point.acc_id,
            path=PathMode(role.path),
            pattern=pattern,
            slo=SloTarget(metric=SloMetric.THROUGHPUT_GBPS, value=offered),
        ))
    return ScenarioSpec(
        name=f'profile-{point.acc_id}',
        accelerators=(accelerator,),
        flows=tuple(flows),
        channel=point.channel,
        port=point.port,
        mode=MODE_BASELINE_RR,
        seed=point.seed,
        duration_cycles=point.run_cycles,
        reference_gbps=point.reference_gbps,
        cycle_ns=point.cycle_ns,
    )


def size_bound(sizes):
    ordered = sorted(sizes, reverse=True)
    if len(ordered) >= 2 and ordered[0] >= RESIZE_RATIO * ordered[1]:
        return ordered[1]
    return 0


def profile_point(point, accelerator):
    """
    Run one combination unshaped and measure steady-state per-role throughput

    The first WARMUP_FRACTION of the run is discarded. If the two halves of
    the measured interval differ by more than DRIFT_BOUND the point is kept but
    flagged low-confidence.

    Returns:
        CapacityProfile
    """
    from .dataplane import Simulation

    if accelerator.acc_id != point.acc_id:
        raise ConfigurationError(f'Point targets {point.acc_id}, got model {accelerator.acc_id}')

    scenario = point_scenario(point, accelerator)
    simulation = Simulation(scenario)
    simulation.run()

    shares, offered, sizes, halves = [], [], [], [0, 0]
    for runtime in simulation.runtimes():
        delivered, _iops = runtime.metrics.measured_rate(scenario.duration_cycles)
        shares.append(delivered)
        offered.append(runtime.spec.pattern.offered_gbps(point.reference_gbps))
        sizes.append(runtime.spec.pattern.msg_size_dist.size)
        halves[0] += runtime.metrics.half_bytes[0]
        halves[1] += runtime.metrics.half_bytes[1]

    carried = sum(shares)
    saturated = carried < sum(offered) * (1 - settings.SLO_TOLERANCE)
    # an unsaturated point carried all it was offered, so capacity is at least that
    total = carried if saturated else max(carried, sum(offered))
    drift = abs(halves[0] - halves[1]) / max(halves) if max(halves) else 0.0
    low_confidence = drift > settings.DRIFT_BOUND
    if low_confidence:
        logger.warning(f'Profile point {point.key.as_string()} drifted {drift:.1%} between halves')

    return CapacityProfile(
        total_gbps=total,
        shares=tuple(shares),
        offered=tuple(offered),
        sizes=tuple(sizes),
        saturated=saturated,
        low_confidence=low_confidence,
        size_bound=size_bound(sizes),
    )


def run_sweep(plan, accelerators, artifact_path=None, parallel=True):
    """
    Execute every point of a plan and collect a ProfileTable

    Points fan out as Celery tasks (eager unless a broker is configured);
    results are aggregated by sorted key, so completion order never matters.

    Args:
        plan (SweepPlan): grid to execute
        accelerators (dict): acc_id -> AcceleratorModel
        artifact_path (str): write the versioned artifact here when given
        parallel (bool): dispatch through Celery

    Returns:
        ProfileTable
    """
    from .serializers import accelerator_to_document, point_to_document
    from .storage_backends import ProfileStorage
    from .tasks import profile_point_task

    accelerator = accelerators.get(plan.acc_id)
    if accelerator is None:
        raise ConfigurationError(f'Sweep plan references unknown accelerator {plan.acc_id!r}',
                                 code='unknown-accelerator')

    points = plan.points()
    logger.info(f'Profiling {len(points)} points for {plan.acc_id}')
    acc_document = accelerator_to_document(accelerator)

    if parallel:
        from celery import group
        job = group(profile_point_task.s(point_to_document(p), acc_document) for p in points)
        results = job.apply_async().join()
    else:
        results = [profile_point_task(point_to_document(p), acc_document) for p in points]

    table = ProfileTable()
    for point, result in sorted(zip(points, results), key=lambda pr: pr[0].key.as_string()):
        if result.get('status') != 'success':
            raise ConfigurationError(f"Profile point failed: {result.get('message')}", code='profile-point')
        table.add(point.key, CapacityProfile.from_dict(result['profile']))

    if artifact_path:
        ProfileStorage().save_table(table, artifact_path)
    logger.info(f'Profiled {len(table)} entries for {plan.acc_id}')
    return table
