"""
Dataplane Wiring
Generators -> host queues -> (shapers) -> interconnect -> accelerator port ->
egress, for every flow of a scenario, plus the control plane in arcus mode
"""

import logging
from collections import deque
from dataclasses import dataclass
from functools import partial

from .control import AccTable, SloManager
from .engine import EventKind, Simulator
from .fabric import AcceleratorPort, FlowQueue, Interconnect, Message, make_arbiter
from .metrics import FlowMetrics, MetricsReport, fairness, flow_entry, utilization_entry
from .models import MODE_ARCUS, MODE_BASELINE_SOFT, AccPath, ArbiterPolicy
from .profiler import ProfileTable
from .shaper import Defer, RegisterFile, SoftwareTokenBucket, TokenBucket, params_for_rate, resize
from .validators import ConfigurationError
from .workloads import ArrivalStream

logger = logging.getLogger(__name__)


@dataclass
class Request:
    request_id: int
    flow_id: int
    size: int
    injected_at: int
    segments: int = 1
    done: int = 0
    dropped: bool = False


class FlowRuntime:
    """Mutable dataplane state of one flow"""

    def __init__(self, spec, metrics, host_queue):
        self.spec = spec
        self.path = spec.path
        self.metrics = metrics
        self.host_queue = host_queue
        self.stream = None
        self.shaper = None
        self.admitted = False
        self.reject_reason = None
        self.active = False
        self.stopped = False
        self.segments = deque()
        self.retry_pending = False
        self.retry_token = 0
        self.blocked = False
        self.in_flight = 0
        self.next_request_id = 0
        self.persistently_violating = False

    @property
    def flow_id(self):
        return self.spec.flow_id

    @property
    def backlogged(self):
        return bool(self.host_queue.occupancy or self.segments)


def default_acc_paths(scenario):
    """One path per distinct path mode the scenario's flows use on each accelerator"""
    paths = {}
    for flow in scenario.flows:
        entries = paths.setdefault(flow.acc_id, [])
        if all(entry.mode != flow.path for entry in entries):
            entries.append(AccPath(f'{flow.acc_id}:{flow.path.value}', f'server0:{flow.acc_id}', flow.path))
    return paths


class Simulation:
    """
    One isolated simulation instance of a scenario

    Args:
        scenario (ScenarioSpec): what to simulate
        profiles (ProfileTable): capacity profiles for arcus admission
        record_trace (bool): keep the event trace lines for export
    """

    def __init__(self, scenario, profiles=None, record_trace=False):
        self.scenario = scenario
        self.sim = Simulator(seed=scenario.seed, cycle_ns=scenario.cycle_ns, record_trace=record_trace)
        self.end_cycle = scenario.duration_cycles
        self.reserve_mode = scenario.mode == MODE_ARCUS
        self.interconnect = Interconnect(self.sim, scenario.channel)
        self.register_file = RegisterFile(self.sim, scenario.control.reconfig_latency_cycles,
                                          on_commit=self._on_commit)

        policy = ArbiterPolicy(kind='rr') if self.reserve_mode else scenario.arbiter
        self.ports = {}
        for model in scenario.accelerators:
            self.ports[model.acc_id] = AcceleratorPort(
                self.sim, model, scenario.port, make_arbiter(policy), self.sim.rng('service', model.acc_id),
                on_output=self._on_output, on_slot_freed=partial(self._slot_freed, model.acc_id),
            )

        self._runtimes = {}
        for spec in scenario.flows:
            if spec.flow_id in self._runtimes:
                raise ConfigurationError(f'Duplicate flow id {spec.flow_id}', code='flow-id')
            if spec.acc_id not in self.ports and not self.reserve_mode:
                raise ConfigurationError(f'Flow {spec.flow_id} references unknown accelerator {spec.acc_id}',
                                         code='unknown-accelerator')
            metrics = FlowMetrics(spec.flow_id, spec.slo.window_requests, scenario.cycle_ns)
            self._runtimes[spec.flow_id] = FlowRuntime(spec, metrics, FlowQueue(spec.flow_id, scenario.port.host_depth))
            if spec.acc_id in self.ports:
                self.ports[spec.acc_id].register_flow(spec.flow_id)

        self.manager = None
        if self.reserve_mode:
            acc_table = AccTable(scenario.acc_paths or default_acc_paths(scenario))
            self.manager = SloManager(self.sim, self, scenario, profiles or ProfileTable(), acc_table,
                                      self.register_file)
        self._util_snapshot = self.interconnect.snapshot()
        self._util_cycle = 0

    def runtimes(self):
        return [self._runtimes[fid] for fid in sorted(self._runtimes)]

    def runtime(self, flow_id):
        return self._runtimes[flow_id]

    def run(self):
        """Schedule the flow timeline, run to the end of the scenario and return SimStats"""
        logger.info(f'Running {self.scenario.name} in {self.scenario.mode} mode, seed {self.scenario.seed}, '
                    f'{len(self._runtimes)} flows, {self.end_cycle} cycles')
        for rt in self.runtimes():
            start = rt.spec.start_cycle
            if start <= self.end_cycle:
                self.sim.call_at(start, EventKind.INJECT, self._register, rt, detail=f'register flow={rt.flow_id}')
            stop = rt.spec.stop_cycle
            if stop is not None and stop <= self.end_cycle:
                self.sim.call_at(stop, EventKind.INJECT, self._stop, rt, detail=f'stop flow={rt.flow_id}')
        if self.manager is not None:
            self.manager.start(self.end_cycle)
        stats = self.sim.run_until(self.end_cycle)
        logger.info(f'Finished {self.scenario.name}: {stats.events_dispatched} events')
        return stats

    # timeline

    def _register(self, rt):
        if self.manager is not None:
            self.manager.register(rt.spec)
        else:
            self.activate(rt.flow_id)

    def _stop(self, rt):
        rt.stopped = True
        if rt.stream is not None:
            rt.stream.stop()
        if self.manager is not None:
            self.manager.deregister(rt.flow_id)

    def activate(self, flow_id):
        """Admitted (or unmanaged) flow starts injecting"""
        rt = self._runtimes[flow_id]
        now = self.sim.now
        rt.admitted = True
        rt.active = True
        stop = rt.spec.stop_cycle
        rt.metrics.activate(now, min(stop, self.end_cycle) if stop is not None else self.end_cycle)
        if self.scenario.mode == MODE_BASELINE_SOFT and rt.spec.slo.is_throughput:
            self._install_soft_shaper(rt)
        rt.stream = ArrivalStream(rt.spec.pattern, self.sim.rng('arrivals', flow_id), self.scenario.reference_gbps,
                                  self.scenario.cycle_ns, start_cycle=now, stop_cycle=stop)
        self._schedule_next_arrival(rt)

    def reject(self, flow_id, reason):
        rt = self._runtimes[flow_id]
        rt.admitted = False
        rt.reject_reason = reason

    def install_shaper(self, flow_id, regs):
        rt = self._runtimes[flow_id]
        rt.shaper = TokenBucket(regs, start_cycle=self.sim.now)
        self.register_file.install(flow_id, rt.shaper)

    def _install_soft_shaper(self, rt):
        clock = self.sim.clock
        timer = clock.ns_to_cycles(self.scenario.soft_timer_ns)
        regs = params_for_rate(rt.spec.slo, clock, interval=timer,
                               max_cost=rt.spec.pattern.msg_size_dist.max_size)
        rt.shaper = SoftwareTokenBucket(regs, self.sim.rng('soft-timer', rt.flow_id),
                                        clock.ns_to_cycles(self.scenario.soft_jitter_ns), start_cycle=self.sim.now)

    def migrate(self, flow_id, mode):
        rt = self._runtimes[flow_id]
        rt.path = mode
        self._try_fetch(rt)

    # control-plane facade

    def flow_metrics(self, flow_id):
        return self._runtimes[flow_id].metrics

    def backlogged(self, flow_id):
        return self._runtimes[flow_id].backlogged

    def direction_utilization(self):
        """Per-direction utilization since the previous call"""
        now = self.sim.now
        snapshot = self.interconnect.snapshot()
        elapsed = now - self._util_cycle
        utilization = {
            direction: float(min(1, (busy - self._util_snapshot[direction]) / elapsed)) if elapsed > 0 else 0.0
            for direction, busy in snapshot.items()
        }
        self._util_snapshot, self._util_cycle = snapshot, now
        return utilization

    # injection

    def _schedule_next_arrival(self, rt):
        event = rt.stream.next_event()
        if event is None:
            return
        cycle, sizes = event
        if cycle > self.end_cycle:
            return
        self.sim.call_at(cycle, EventKind.INJECT, self._inject, rt, sizes,
                         detail=f'flow={rt.flow_id} n={len(sizes)}')

    def _inject(self, rt, sizes):
        now = self.sim.now
        for size in sizes:
            rt.metrics.on_inject(size)
            request = Request(rt.next_request_id, rt.flow_id, size, now)
            rt.next_request_id += 1
            if not rt.host_queue.push(request):
                request.dropped = True
                rt.metrics.on_drop('host')
        if not rt.stopped:
            self._schedule_next_arrival(rt)
        self._try_fetch(rt)

    # fetch

    def _next_segment(self, rt):
        while rt.segments and rt.segments[0][0].dropped:
            rt.segments.popleft()
        if not rt.segments and rt.host_queue.occupancy:
            request = rt.host_queue.pop()
            limit = rt.shaper.regs.max_msg_bytes if rt.shaper is not None else 0
            sizes = resize(request.size, limit) if limit and request.size > limit else [request.size]
            request.segments = len(sizes)
            last = len(sizes) - 1
            rt.segments.extend((request, size, i == last) for i, size in enumerate(sizes))
        return rt.segments[0] if rt.segments else None

    def _try_fetch(self, rt):
        port = self.ports.get(rt.spec.acc_id)
        while rt.active and not rt.retry_pending:
            segment = self._next_segment(rt)
            if segment is None:
                return
            request, size, is_last = segment
            ingress, egress = rt.path.legs
            if ingress is not None and self.interconnect.busy(rt.flow_id, ingress):
                return
            if self.reserve_mode and not port.can_reserve(rt.flow_id):
                rt.blocked = True
                return
            if rt.shaper is not None:
                decision = rt.shaper.try_fetch(size, self.sim.now)
                if isinstance(decision, Defer):
                    rt.retry_pending = True
                    self.sim.call_at(decision.next_eligible_cycle, EventKind.TOKEN_REFILL, self._retry, rt,
                                     rt.retry_token, detail=f'flow={rt.flow_id}')
                    return

            rt.segments.popleft()
            rt.blocked = False
            rt.in_flight += 1
            message = Message(rt.flow_id, request, size, self.sim.now, is_last=is_last,
                              egress_leg=egress, reserved=self.reserve_mode)
            if self.reserve_mode:
                port.reserve(rt.flow_id)
            if ingress is None:
                self._deliver(rt, message)
            else:
                self.interconnect.request_transfer(rt.flow_id, ingress, size,
                                                   partial(self._ingress_done, rt, message))

    def _retry(self, rt, token):
        if token != rt.retry_token:
            return
        rt.retry_pending = False
        self._try_fetch(rt)

    def _on_commit(self, flow_id, regs):
        rt = self._runtimes[flow_id]
        if self.manager is not None:
            self.manager.on_commit(flow_id, regs)
        rt.retry_token += 1
        rt.retry_pending = False
        self._try_fetch(rt)

    def _ingress_done(self, rt, message):
        self._deliver(rt, message)
        self._try_fetch(rt)

    def _deliver(self, rt, message):
        if not self.ports[rt.spec.acc_id].deliver(message):
            rt.in_flight -= 1
            if not message.request.dropped:
                message.request.dropped = True
                rt.metrics.on_drop('device')

    def _slot_freed(self, acc_id, _flow_id):
        if not self.reserve_mode:
            return
        for rt in self.runtimes():
            if rt.blocked and rt.spec.acc_id == acc_id:
                self._try_fetch(rt)

    # egress

    def _on_output(self, message):
        rt = self._runtimes[message.flow_id]
        if message.egress_leg is None:
            self._complete(rt, message)
            return
        port = self.ports[rt.spec.acc_id]
        queue = port.egress[rt.flow_id]
        queue.push(message)
        if queue.occupancy == 1:
            self._send_egress(rt, port)

    def _send_egress(self, rt, port):
        message = port.egress[rt.flow_id].peek()
        self.interconnect.request_transfer(rt.flow_id, message.egress_leg, message.egress_bytes,
                                           partial(self._egress_done, rt, port))

    def _egress_done(self, rt, port):
        message = port.egress[rt.flow_id].pop()
        self._complete(rt, message)
        if port.egress[rt.flow_id].occupancy:
            self._send_egress(rt, port)
        port.kick()
        # an inline peer-to-peer flow shares one direction for both legs
        self._try_fetch(rt)

    def _complete(self, rt, message):
        self.sim.call_at(self.sim.now, EventKind.COMPLETION_WRITE, self._completion_write, rt, message,
                         detail=f'flow={rt.flow_id} bytes={message.size}')

    def _completion_write(self, rt, message):
        now = self.sim.now
        rt.in_flight -= 1
        rt.metrics.on_segment(message.size, now)
        request = message.request
        request.done += 1
        if message.is_last and not request.dropped:
            rt.metrics.on_complete(request.size, request.injected_at, now)

    # accounting

    def flow_state_size(self):
        """
        Number of per-flow state slots held by the simulator (runtime record,
        shaper state and registers, control-plane status, port bookkeeping).
        Queue contents are bounded by configured depths and not counted.
        """
        total = 0
        for rt in self.runtimes():
            total += len(vars(rt))
            if rt.shaper is not None:
                total += len(vars(rt.shaper)) + len(vars(rt.shaper.regs))
            if self.manager is not None and rt.flow_id in self.manager.table:
                total += len(vars(self.manager.table.get(rt.flow_id)))
            port = self.ports.get(rt.spec.acc_id)
            if port is not None:
                total += sum(1 for table in (port.queues, port.egress, port.reserved) if rt.flow_id in table)
        return total

    def report(self, stats):
        """Assemble the MetricsReport of a finished run"""
        scenario = self.scenario
        end = self.end_cycle
        flows = []
        for rt in self.runtimes():
            if self.manager is not None:
                status = self.manager.table.get(rt.flow_id)
                rt.persistently_violating = bool(status and status.persistently_violating)
            flows.append(flow_entry(rt, end, rt.shaper is not None, scenario.reference_gbps))

        accelerators = []
        for acc_id, port in sorted(self.ports.items()):
            elapsed_ns = max(1, end * scenario.cycle_ns)
            accelerators.append({
                'acc_id': acc_id,
                'served_gbps': port.served_bytes * 8 / elapsed_ns,
                'utilization': float(min(1, port.busy_cycles / end)) if end else 0.0,
                'harvestable_gbps': self.manager.harvestable(acc_id) if self.manager is not None else None,
            })

        return MetricsReport(
            scenario=scenario.name,
            mode=scenario.mode,
            seed=scenario.seed,
            duration_cycles=scenario.duration_cycles,
            cycle_ns=scenario.cycle_ns,
            flows=flows,
            fairness=fairness([f['delivered_gbps'] for f in flows if f['admitted']]),
            utilization=utilization_entry(self.interconnect, end),
            accelerators=accelerators,
            control_log=list(self.manager.events) if self.manager is not None else [],
            status_log=list(self.manager.status_log) if self.manager is not None else [],
            register_audit=list(self.register_file.history),
            engine=stats.as_dict(),
            flow_state_size=self.flow_state_size(),
        )
