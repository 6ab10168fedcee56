"""
SLO Manager
Periodic control-plane process: monitors every admitted flow, admits or
rejects registrations against profiled capacity, migrates paths and
re-derives shaper registers for violating flows
"""

import logging
from dataclasses import dataclass
from typing import Optional

from . import settings
from .engine import EventKind
from .models import SloMetric, SloTarget
from .profiler import ProfileTag, RoleKey, classify, quantize_load, setting_key
from .shaper import minimum_rate, params_for_rate
from .validators import ConfigurationError, UnachievableRateError

logger = logging.getLogger(__name__)

# float slack only; admitted SLOs never exceed profiled capacity
CAPACITY_EPSILON = 1e-9


@dataclass(frozen=True)
class Admit:
    profile_key: object = None


@dataclass(frozen=True)
class Reject:
    reason: str


def role_for(spec, reference_gbps, path_mode=None):
    """Profile role of a flow: its size and SLO demand expressed as a load"""
    return RoleKey(
        size=spec.pattern.msg_size_dist.representative_size,
        load=min(1.0, quantize_load(spec.demand_gbps(reference_gbps) / reference_gbps)),
        path=(path_mode or spec.path).value,
    )


class AccTable:
    """acc_id -> candidate paths (AccPath), first entry is the default"""

    def __init__(self, paths=None):
        self._paths = {acc_id: tuple(entries) for acc_id, entries in (paths or {}).items()}
        for acc_id, entries in self._paths.items():
            if not entries:
                raise ConfigurationError(f'Accelerator {acc_id} has no path', code='acc-table')

    def __contains__(self, acc_id):
        return acc_id in self._paths

    def paths(self, acc_id):
        return self._paths.get(acc_id, ())

    def path_for_mode(self, acc_id, mode):
        for entry in self.paths(acc_id):
            if entry.mode == mode:
                return entry
        return None


@dataclass
class PerFlowStatus:
    flow_id: int
    vm_id: str
    acc_id: str
    path_id: str
    path_mode: object
    slo: SloTarget
    registers: object = None
    share_gbps: float = 0.0
    size_bound: int = 0
    measured_gbps: Optional[float] = None
    measured_iops: Optional[float] = None
    tail_latency_ns: Optional[float] = None
    backlogged: bool = False
    violating: bool = False
    violation_streak: int = 0
    persistently_violating: bool = False
    under_capacity: bool = False

    def as_dict(self):
        return {
            'flow_id': self.flow_id,
            'path_id': self.path_id,
            'measured_gbps': self.measured_gbps,
            'measured_iops': self.measured_iops,
            'tail_latency_ns': self.tail_latency_ns,
            'violating': self.violating,
            'persistently_violating': self.persistently_violating,
            'registers': self.registers.as_dict() if self.registers else None,
        }


class PerFlowStatusTable:
    """One entry per admitted flow, indexed by flow id"""

    def __init__(self):
        self._entries = {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, flow_id):
        return flow_id in self._entries

    def __iter__(self):
        return iter([self._entries[fid] for fid in sorted(self._entries)])

    def add(self, status):
        self._entries[status.flow_id] = status

    def remove(self, flow_id):
        return self._entries.pop(flow_id, None)

    def get(self, flow_id):
        return self._entries.get(flow_id)

    def on_accelerator(self, acc_id):
        return [s for s in self if s.acc_id == acc_id]


class SloManager:
    """
    Control loop run every tick_us of simulated time

    Each tick refreshes every flow's measured status, reacts to flows that
    violated for damping_ticks consecutive ticks, then processes queued
    registrations in arrival order.

    Args:
        runtime: dataplane facade (metrics, backlog, shaper install, migration,
            direction utilization)
        scenario (ScenarioSpec): accelerators, control settings, reference rate
        profiles (ProfileTable): offline capacity profiles
        acc_table (AccTable): candidate paths per accelerator
        register_file (RegisterFile): MMIO interface to the shapers
    """

    def __init__(self, sim, runtime, scenario, profiles, acc_table, register_file):
        self.sim = sim
        self.runtime = runtime
        self.scenario = scenario
        self.profiles = profiles
        self.acc_table = acc_table
        self.register_file = register_file
        self.control = scenario.control
        self.table = PerFlowStatusTable()
        self.setting = setting_key(scenario.channel, scenario.port)
        self.tick_cycles = max(1, sim.clock.us_to_cycles(self.control.tick_us))
        self.pending = []
        self.specs = {}
        self.events = []
        self.status_log = []
        self.end_cycle = 0

    def start(self, end_cycle):
        self.end_cycle = end_cycle
        self.sim.call_at(self.sim.now, EventKind.CONTROL_TICK, self.control_tick)

    def register(self, spec):
        self.specs[spec.flow_id] = spec
        self.pending.append(spec)

    def deregister(self, flow_id):
        status = self.table.remove(flow_id)
        if status is not None:
            self.register_file.remove(flow_id)
            self._log('deregister', flow_id)
            logger.info(f'Flow {flow_id} deregistered from {status.acc_id}')

    def _log(self, action, flow_id, **detail):
        self.events.append({'cycle': self.sim.now, 'action': action, 'flow_id': flow_id, **detail})

    def control_tick(self):
        now = self.sim.now
        for status in self.table:
            self._refresh(status, now)
            if self.slo_violation_check(status.flow_id):
                status.violation_streak = 0
                status.violating = False
                status.persistently_violating = False
            else:
                status.violating = True
                status.violation_streak += 1
                if status.violation_streak >= self.control.damping_ticks and not status.persistently_violating:
                    status.violation_streak = 0
                    self.readjust_pattern(status.flow_id)
            self.status_log.append({'cycle': now, **status.as_dict()})

        pending, self.pending = self.pending, []
        for spec in pending:
            decision = self.admission_control(spec)
            if isinstance(decision, Admit):
                self.runtime.activate(spec.flow_id)
            else:
                self.runtime.reject(spec.flow_id, decision.reason)

        if now + self.tick_cycles <= self.end_cycle:
            self.sim.call_at(now + self.tick_cycles, EventKind.CONTROL_TICK, self.control_tick)

    def _refresh(self, status, now):
        metrics = self.runtime.flow_metrics(status.flow_id)
        rate = metrics.recent_rate(now)
        status.measured_gbps, status.measured_iops = rate if rate else (None, None)
        status.tail_latency_ns = metrics.recent_latency(status.slo.percentile)
        status.backlogged = self.runtime.backlogged(status.flow_id)

    def slo_violation_check(self, flow_id):
        """
        True when the flow meets its SLO over the last window

        Flows without a full window of samples are given the benefit of the
        doubt. A throughput flow that is not backlogged is demand-limited and
        therefore never violating.
        """
        status = self.table.get(flow_id)
        slo = status.slo
        tolerance = self.control.slo_tolerance
        if slo.metric == SloMetric.TAIL_LATENCY:
            if status.tail_latency_ns is None:
                return True
            return status.tail_latency_ns <= slo.value

        measured = status.measured_iops if slo.metric == SloMetric.THROUGHPUT_IOPS else status.measured_gbps
        if measured is None or not status.backlogged:
            return True
        return measured >= slo.value * (1 - tolerance)

    def _demand(self, spec):
        return spec.demand_gbps(self.scenario.reference_gbps)

    def _role(self, spec, path_mode=None):
        return role_for(spec, self.scenario.reference_gbps, path_mode)

    def combination(self, acc_id, extra=None, override=None):
        """
        Roles of the live combination on an accelerator, optionally with one
        more flow and/or one flow on a different path

        Returns:
            list: (RoleKey, flow_id) sorted by role
        """
        override = override or {}
        members = []
        for status in self.table.on_accelerator(acc_id):
            mode = override.get(status.flow_id, status.path_mode)
            members.append((self._role(self.specs[status.flow_id], mode), status.flow_id))
        if extra is not None:
            members.append((self._role(extra), extra.flow_id))
        return sorted(members)

    def lookup(self, acc_id, members):
        return self.profiles.lookup(acc_id, [role for role, _fid in members], self.setting)

    def admission_control(self, new_flow):
        """
        Admit iff the post-admission combination is profiled, leaves enough
        capacity for the new flow and is SLO-friendly for every member

        Returns:
            Admit | Reject(reason)
        """
        model = self.scenario.accelerator(new_flow.acc_id)
        if model is None or new_flow.acc_id not in self.acc_table:
            return self._reject(new_flow, 'unknown-accelerator')

        members = self.combination(new_flow.acc_id, extra=new_flow)
        found = self.lookup(new_flow.acc_id, members)
        if found is None:
            return self._reject(new_flow, 'missing-profile')
        key, profile = found

        admitted = sum(self._demand(self.specs[s.flow_id]) for s in self.table.on_accelerator(new_flow.acc_id))
        demand = self._demand(new_flow)
        if admitted + demand > profile.total_gbps + CAPACITY_EPSILON:
            return self._reject(new_flow, 'capacity')

        slos = [self.specs[fid].slo if fid != new_flow.flow_id else new_flow.slo for _role, fid in members]
        if classify(profile, slos, tolerance=settings.ADMISSION_TOLERANCE) == ProfileTag.SLO_VIOLATING:
            return self._reject(new_flow, 'pattern')

        path = self.acc_table.path_for_mode(new_flow.acc_id, new_flow.path) or self.acc_table.paths(new_flow.acc_id)[0]
        status = PerFlowStatus(
            flow_id=new_flow.flow_id,
            vm_id=new_flow.vm_id,
            acc_id=new_flow.acc_id,
            path_id=path.path_id,
            path_mode=new_flow.path,
            slo=new_flow.slo,
        )
        self.table.add(status)
        self._apply_profile(new_flow.acc_id, members, profile)

        status.registers = self.reshape_decision(new_flow.flow_id)
        self.runtime.install_shaper(new_flow.flow_id, status.registers)
        self._log('admit', new_flow.flow_id, profile_key=key.as_string())
        logger.info(f'Admitted flow {new_flow.flow_id} on {new_flow.acc_id} '
                    f'(demand {demand:.3f} Gbps, profiled total {profile.total_gbps:.3f} Gbps)')
        return Admit(profile_key=key)

    def _reject(self, spec, reason):
        self._log('reject', spec.flow_id, reason=reason)
        logger.info(f'Rejected flow {spec.flow_id} on {spec.acc_id}: {reason}')
        return Reject(reason)

    def _apply_profile(self, acc_id, members, profile):
        """Refresh every member's profiled share and size bound from the live combination"""
        for index, (_role, flow_id) in enumerate(members):
            status = self.table.get(flow_id)
            if status is not None:
                status.share_gbps = profile.shares[index]
                status.size_bound = profile.size_bound

    def direction_headroom(self, mode, utilization):
        legs = [d for d in mode.legs if d is not None]
        if not legs:
            return 1.0
        return 1.0 - max(utilization.get(d, 0.0) for d in legs)

    def path_selection(self, flow_id, utilization=None):
        """
        Candidate path whose bottleneck direction has the most headroom, if it
        beats the current path by more than the hysteresis margin
        """
        status = self.table.get(flow_id)
        candidates = [p for p in self.acc_table.paths(status.acc_id) if p.path_id != status.path_id]
        if not candidates:
            return None
        utilization = utilization if utilization is not None else self.runtime.direction_utilization()
        current = self.direction_headroom(status.path_mode, utilization)
        best = max(candidates, key=lambda p: self.direction_headroom(p.mode, utilization))
        if self.direction_headroom(best.mode, utilization) - current > self.control.hysteresis:
            return best
        return None

    def _shaping_unit(self, spec, gbps):
        if spec.slo.metric == SloMetric.THROUGHPUT_IOPS:
            return gbps * 1e9 / (8 * spec.pattern.msg_size_dist.mean)
        return gbps

    def _registers(self, metric, rate, max_cost, max_msg_bytes=0):
        """Registers for a rate, raised to the slowest rate the clock can express"""
        clock = self.sim.clock
        rate = max(rate, minimum_rate(metric, clock.cycle_ns))
        try:
            return params_for_rate(SloTarget(metric, rate), clock, max_cost=max_cost, max_msg_bytes=max_msg_bytes)
        except UnachievableRateError as exc:
            logger.warning(f'Shaping rate {rate:g} is not expressible, using {exc.closest_rate:g}')
            return params_for_rate(SloTarget(metric, exc.closest_rate), clock,
                                   max_cost=max_cost, max_msg_bytes=max_msg_bytes)

    def reshape_decision(self, flow_id):
        """
        Registers for the flow's target: min(SLO, profiled share)

        A flow offering no more than its target is demand-limited: it is
        shaped DEMAND_RATE_HEADROOM above the target with a bucket of
        DEMAND_BUCKET_MESSAGES bursts, so arrival bursts pass while its mean
        stays bounded by what it offers. A backlogged flow measured below
        target has its rate scaled up by target / measured, never beyond the
        profiled share. Latency-bound flows are shaped above their offered
        rate with a bucket deep enough for several bursts.
        """
        status = self.table.get(flow_id)
        spec = self.specs[flow_id]
        clock = self.sim.clock
        max_size = spec.pattern.msg_size_dist.max_size
        burst = spec.pattern.burstiness

        if spec.slo.metric == SloMetric.TAIL_LATENCY:
            rate = self._demand(spec) * settings.LATENCY_RATE_HEADROOM
            return self._registers(SloMetric.THROUGHPUT_GBPS, rate,
                                   max_cost=settings.LATENCY_BUCKET_BURSTS * burst * max_size)

        metric = spec.slo.metric
        share = self._shaping_unit(spec, status.share_gbps)
        # a share within admission tolerance of the SLO covers it
        target = spec.slo.value if share >= spec.slo.value * (1 - settings.ADMISSION_TOLERANCE) else share
        status.under_capacity = target < spec.slo.value * (1 - self.control.slo_tolerance)

        max_msg_bytes = 0
        if metric == SloMetric.THROUGHPUT_GBPS and status.size_bound and max_size > status.size_bound:
            max_msg_bytes = status.size_bound
        max_cost = max_msg_bytes or max_size

        offered = self._shaping_unit(spec, spec.pattern.offered_gbps(self.scenario.reference_gbps))
        if 0 < target and offered <= target:
            return self._registers(metric, target * settings.DEMAND_RATE_HEADROOM,
                                   max_cost=settings.DEMAND_BUCKET_MESSAGES * burst * max_cost,
                                   max_msg_bytes=max_msg_bytes)

        rate = target
        measured = status.measured_iops if metric == SloMetric.THROUGHPUT_IOPS else status.measured_gbps
        if (status.registers is not None and status.backlogged and measured
                and measured < target * (1 - self.control.slo_tolerance)):
            current = status.registers.rate(clock.cycle_ns)
            rate = min(share, current * target / measured)
        return self._registers(metric, rate, max_cost=max_cost, max_msg_bytes=max_msg_bytes)

    def readjust_pattern(self, flow_id):
        """
        React to a violating flow: migrate to a less loaded path if one
        exists, then re-derive and write registers. A flow with nothing left
        to change is marked persistently-violating.
        """
        status = self.table.get(flow_id)
        migrated = False
        new_path = self.path_selection(flow_id)
        if new_path is not None:
            old = status.path_id
            members = self.combination(status.acc_id, override={flow_id: new_path.mode})
            status.path_id = new_path.path_id
            status.path_mode = new_path.mode
            self.runtime.migrate(flow_id, new_path.mode)
            found = self.lookup(status.acc_id, members)
            if found is not None:
                self._apply_profile(status.acc_id, members, found[1])
            migrated = True
            self._log('migrate', flow_id, from_path=old, to_path=new_path.path_id)
            logger.info(f'Flow {flow_id} migrated {old} -> {new_path.path_id}')

        regs = self.reshape_decision(flow_id)
        current = self.register_file.pending_write(flow_id) or status.registers
        if regs != current:
            self.register_file.write_register(flow_id, regs, self.sim.now)
            self._log('reshape', flow_id, registers=regs.as_dict())
        elif not migrated:
            status.persistently_violating = True
            self._log('persistent-violation', flow_id)
            logger.warning(f'Flow {flow_id} violates its SLO with no feasible adjustment')

    def on_commit(self, flow_id, regs):
        status = self.table.get(flow_id)
        if status is not None:
            status.registers = regs

    def harvestable(self, acc_id):
        """Profiled capacity of the live combination minus admitted demand"""
        statuses = self.table.on_accelerator(acc_id)
        if not statuses:
            return None
        found = self.lookup(acc_id, self.combination(acc_id))
        if found is None:
            return None
        demand = sum(self._demand(self.specs[s.flow_id]) for s in statuses)
        return max(0.0, found[1].total_gbps - demand)
