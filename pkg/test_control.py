"""
Tests for admission control, reshaping and path migration
"""

from itertools import combinations

import numpy as np
import pytest

from acc_slo import settings
from acc_slo.control import AccTable, Admit, Reject, SloManager, role_for
from acc_slo.dataplane import Simulation, default_acc_paths
from acc_slo.engine import Simulator
from acc_slo.models import MODE_ARCUS, AccPath, Direction, PathMode, SloMetric
from acc_slo.profiler import CapacityProfile, ProfileKey, ProfileTable, setting_key
from acc_slo.shaper import RegisterFile, TokenBucket, minimum_rate

ADMISSION_REASONS = {'unknown-accelerator', 'missing-profile', 'capacity', 'pattern'}


class SteadyMetrics:
    def __init__(self, gbps=None, latency_ns=None):
        self.gbps = gbps
        self.latency_ns = latency_ns

    def recent_rate(self, _now):
        return (self.gbps, 0.0) if self.gbps is not None else None

    def recent_latency(self, _percentile):
        return self.latency_ns


class RecordingRuntime:
    """Dataplane facade that records what the manager asks of it"""

    def __init__(self, registers):
        self.registers = registers
        self.activated = []
        self.rejected = {}
        self.migrated = []
        self.metrics = {}
        self.backlog = {}
        self.utilization = {}

    def activate(self, flow_id):
        self.activated.append(flow_id)

    def reject(self, flow_id, reason):
        self.rejected[flow_id] = reason

    def install_shaper(self, flow_id, regs):
        self.registers.install(flow_id, TokenBucket(regs))

    def migrate(self, flow_id, mode):
        self.migrated.append((flow_id, mode))

    def flow_metrics(self, flow_id):
        return self.metrics.get(flow_id, SteadyMetrics())

    def backlogged(self, flow_id):
        return self.backlog.get(flow_id, False)

    def direction_utilization(self):
        return self.utilization


def build_manager(scenario, profiles, acc_paths=None):
    sim = Simulator()
    registers = RegisterFile(sim)
    runtime = RecordingRuntime(registers)
    acc_table = AccTable(acc_paths or default_acc_paths(scenario))
    return SloManager(sim, runtime, scenario, profiles, acc_table, registers), runtime


def add_profile(table, scenario, flows, total, shares):
    roles = [role_for(flow, scenario.reference_gbps) for flow in flows]
    key = ProfileKey(flows[0].acc_id, tuple(roles), setting_key(scenario.channel, scenario.port))
    table.add(key, CapacityProfile(total_gbps=total, shares=tuple(shares), offered=tuple(shares),
                                   sizes=tuple(role.size for role in key.roles)))
    return key


def admit_all(manager, flows):
    decisions = []
    for flow in flows:
        manager.register(flow)
        decisions.append(manager.admission_control(flow))
    return decisions


@pytest.fixture
def two_flows(make_flow):
    # roles sort by load: flow 2 (0.2) before flow 1 (0.3); both offer more than their SLO
    return make_flow(1, load=0.5, slo_gbps=30.0), make_flow(2, load=0.5, slo_gbps=20.0)


def test_admits_when_profile_covers_every_slo(make_scenario, two_flows):
    f1, f2 = two_flows
    scenario = make_scenario(two_flows, mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [f1], 50.0, [45.0])
    add_profile(table, scenario, [f1, f2], 60.0, [20.0, 30.0])
    manager, runtime = build_manager(scenario, table)

    decisions = admit_all(manager, two_flows)
    assert all(isinstance(decision, Admit) for decision in decisions)
    assert manager.table.get(1).share_gbps == 30.0
    assert runtime.registers.registers(1).rate(4) == pytest.approx(30.0, rel=1e-3)
    assert runtime.registers.registers(2).rate(4) == pytest.approx(20.0, rel=1e-3)
    assert manager.harvestable(f1.acc_id) == pytest.approx(10.0)


def test_rejects_over_capacity(make_scenario, two_flows):
    f1, f2 = two_flows
    scenario = make_scenario(two_flows, mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [f1], 50.0, [45.0])
    add_profile(table, scenario, [f1, f2], 40.0, [15.0, 25.0])
    manager, _runtime = build_manager(scenario, table)

    first, second = admit_all(manager, two_flows)
    assert isinstance(first, Admit)
    assert second == Reject('capacity')
    assert 2 not in manager.table
    assert manager.events[-1] == {'cycle': 0, 'action': 'reject', 'flow_id': 2, 'reason': 'capacity'}


def test_rejects_slo_violating_pattern(make_scenario, two_flows):
    f1, f2 = two_flows
    scenario = make_scenario(two_flows, mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [f1], 50.0, [45.0])
    add_profile(table, scenario, [f1, f2], 60.0, [20.0, 25.0])
    manager, _runtime = build_manager(scenario, table)

    assert admit_all(manager, two_flows)[1] == Reject('pattern')


def test_rejects_missing_profile_and_unknown_accelerator(make_scenario, make_flow):
    stray = make_flow(9, acc_id='nope')
    known = make_flow(1)
    scenario = make_scenario([known, stray], mode=MODE_ARCUS)
    manager, _runtime = build_manager(scenario, ProfileTable())
    assert admit_all(manager, [known, stray]) == [Reject('missing-profile'), Reject('unknown-accelerator')]


def test_share_within_tolerance_shapes_at_the_slo(make_scenario, make_flow):
    flow = make_flow(1, load=0.5, slo_gbps=30.0)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 40.0, [29.8])
    manager, runtime = build_manager(scenario, table)
    admit_all(manager, [flow])
    assert runtime.registers.registers(1).rate(4) == pytest.approx(30.0, rel=1e-3)
    assert not manager.table.get(1).under_capacity


def test_latency_flow_shaped_above_offered_rate(make_scenario, make_flow):
    flow = make_flow(1, size=64, load=0.02, slo_gbps=1000, metric=SloMetric.TAIL_LATENCY)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [2.0])
    manager, runtime = build_manager(scenario, table)
    admit_all(manager, [flow])
    regs = runtime.registers.registers(1)
    assert regs.rate(4) == pytest.approx(2.0 * settings.LATENCY_RATE_HEADROOM, rel=1e-3)
    assert regs.bkt_size >= settings.LATENCY_BUCKET_BURSTS * 64


def test_large_messages_resized_to_profile_size_bound(make_scenario, make_flow):
    big, small = make_flow(1, size=4096, slo_gbps=15.0), make_flow(2, size=1024, slo_gbps=15.0)
    scenario = make_scenario([big, small], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [big], 40.0, [38.0])
    key = add_profile(table, scenario, [big, small], 40.0, [20.0, 20.0])
    table.add(key, CapacityProfile(total_gbps=40.0, shares=(20.0, 20.0), offered=(15.0, 15.0),
                                   sizes=(1024, 4096), size_bound=1024))
    manager, runtime = build_manager(scenario, table)
    admit_all(manager, [big, small])
    # the big flow's registers are re-derived on its next reshape
    assert manager.reshape_decision(1).max_msg_bytes == 1024
    assert runtime.registers.registers(2).max_msg_bytes == 0


def test_violation_check_needs_backlog(make_scenario, make_flow):
    flow = make_flow(1, slo_gbps=30.0)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [45.0])
    manager, _runtime = build_manager(scenario, table)
    admit_all(manager, [flow])

    status = manager.table.get(1)
    status.measured_gbps = 20.0
    status.backlogged = False
    assert manager.slo_violation_check(1)
    status.backlogged = True
    assert not manager.slo_violation_check(1)
    status.measured_gbps = 29.5
    assert manager.slo_violation_check(1)


def test_latency_violation_check(make_scenario, make_flow):
    flow = make_flow(1, size=64, load=0.02, slo_gbps=1000, metric=SloMetric.TAIL_LATENCY)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [2.0])
    manager, _runtime = build_manager(scenario, table)
    admit_all(manager, [flow])
    status = manager.table.get(1)
    assert manager.slo_violation_check(1)
    status.tail_latency_ns = 1500
    assert not manager.slo_violation_check(1)


def test_tick_admits_pending_and_reshapes_after_damping(make_scenario, make_flow):
    flow = make_flow(1, load=0.5, slo_gbps=30.0)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [45.0])
    manager, runtime = build_manager(scenario, table)

    manager.register(flow)
    manager.control_tick()
    assert runtime.activated == [1]

    runtime.metrics[1] = SteadyMetrics(gbps=10.0)
    runtime.backlog[1] = True
    for _ in range(scenario.control.damping_ticks - 1):
        manager.control_tick()
    assert not any(event['action'] == 'reshape' for event in manager.events)
    manager.control_tick()
    assert manager.events[-1]['action'] == 'reshape'
    # scaled by target / measured, capped at the profiled share
    assert runtime.registers.pending_write(1).rate(4) == pytest.approx(45.0, rel=1e-3)


def test_persistent_violation_when_nothing_can_change(make_scenario, make_flow):
    flow = make_flow(1, slo_gbps=30.0)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [45.0])
    manager, _runtime = build_manager(scenario, table)
    admit_all(manager, [flow])

    manager.readjust_pattern(1)
    assert manager.table.get(1).persistently_violating
    assert manager.events[-1]['action'] == 'persistent-violation'


def test_path_selection_with_hysteresis(make_scenario, make_flow):
    flow = make_flow(1, slo_gbps=30.0)
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [45.0])
    paths = {flow.acc_id: (AccPath('fc', 'server0', PathMode.FUNCTION_CALL),
                           AccPath('rx', 'server0', PathMode.INLINE_NIC_RX))}
    manager, runtime = build_manager(scenario, table, acc_paths=paths)
    admit_all(manager, [flow])

    assert manager.path_selection(1, {Direction.H2D: 0.25, Direction.D2H: 0.2}) is None
    assert manager.path_selection(1, {Direction.H2D: 0.9, Direction.D2H: 0.2}).path_id == 'rx'

    runtime.utilization = {Direction.H2D: 0.9, Direction.D2H: 0.2}
    manager.readjust_pattern(1)
    assert runtime.migrated == [(1, PathMode.INLINE_NIC_RX)]
    assert manager.table.get(1).path_id == 'rx'
    assert any(event['action'] == 'migrate' for event in manager.events)


def test_deregistration_frees_capacity(make_scenario, two_flows):
    f1, f2 = two_flows
    scenario = make_scenario(two_flows, mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [f1], 50.0, [45.0])
    add_profile(table, scenario, [f2], 50.0, [45.0])
    add_profile(table, scenario, [f1, f2], 40.0, [15.0, 25.0])
    manager, runtime = build_manager(scenario, table)

    assert admit_all(manager, two_flows)[1] == Reject('capacity')
    manager.deregister(1)
    assert 1 not in runtime.registers.buckets
    assert isinstance(manager.admission_control(f2), Admit)


def test_admission_has_no_slack_above_profiled_capacity(make_scenario, make_flow):
    first, second = make_flow(1, load=0.5, slo_gbps=20.0), make_flow(2, load=0.5, slo_gbps=10.1)
    scenario = make_scenario([first, second], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [first], 50.0, [45.0])
    add_profile(table, scenario, [first, second], 30.0, [10.1, 20.0])
    manager, _runtime = build_manager(scenario, table)
    admitted, rejected = admit_all(manager, [first, second])
    assert isinstance(admitted, Admit)
    assert rejected == Reject('capacity')


def test_demand_limited_flow_gets_burst_headroom(make_scenario, make_flow):
    flow = make_flow(1, load=0.1, slo_gbps=10.0, injection='poisson')
    scenario = make_scenario([flow], mode=MODE_ARCUS)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 10.0, [10.0])
    manager, runtime = build_manager(scenario, table)
    admit_all(manager, [flow])
    regs = runtime.registers.registers(1)
    assert regs.rate(4) == pytest.approx(10.0 * settings.DEMAND_RATE_HEADROOM, rel=1e-3)
    assert regs.bkt_size >= settings.DEMAND_BUCKET_MESSAGES * 1500


@pytest.mark.parametrize('load', [0.0, 1e-7, 2.5e-8])
def test_idle_latency_flow_gets_the_slowest_registers(make_scenario, make_flow, load):
    flow = make_flow(1, size=64, load=load, slo_gbps=1000, metric=SloMetric.TAIL_LATENCY)
    scenario = make_scenario([flow], mode=MODE_ARCUS, duration_cycles=60_000)
    table = ProfileTable()
    add_profile(table, scenario, [flow], 50.0, [0.0])

    simulation = Simulation(scenario, profiles=table)
    report = simulation.report(simulation.run())
    assert report.flow(1)['admitted']
    regs = simulation.register_file.registers(1)
    assert regs.rate(4) >= minimum_rate(SloMetric.THROUGHPUT_GBPS, 4) * (1 - 1e-9)


def random_stream(rng, make_flow):
    flows = [
        make_flow(i, size=int(rng.choice([64, 1500, 4096])), slo_gbps=float(rng.integers(1, 25)))
        for i in range(1, 5)
    ]
    return flows


def random_table(rng, scenario, flows):
    table = ProfileTable()
    for count in range(1, len(flows) + 1):
        for subset in combinations(flows, count):
            shares = [float(rng.uniform(0.5, 30.0)) for _ in subset]
            add_profile(table, scenario, list(subset), float(rng.uniform(10.0, 60.0)), shares)
    return table


def test_admission_never_oversubscribes_profiled_capacity(make_scenario, make_flow):
    rng = np.random.default_rng(99)
    for _trial in range(50):
        flows = random_stream(rng, make_flow)
        scenario = make_scenario(flows, mode=MODE_ARCUS)
        table = random_table(rng, scenario, flows)
        runs = []
        for _repeat in range(2):
            manager, _runtime = build_manager(scenario, table)
            decisions = []
            for flow in flows:
                manager.register(flow)
                decision = manager.admission_control(flow)
                decisions.append(decision)
                if isinstance(decision, Reject):
                    assert decision.reason in ADMISSION_REASONS
                    continue
                live = manager.combination(flow.acc_id)
                _key, found = table.lookup(flow.acc_id, [role for role, _fid in live], manager.setting)
                admitted = sum(manager.specs[fid].demand_gbps(100.0) for _role, fid in live)
                assert admitted <= found.total_gbps + 1e-9
            runs.append(decisions)
        assert runs[0] == runs[1]


def test_rejected_flow_reported_without_traffic(make_scenario, two_flows):
    f1, f2 = two_flows
    scenario = make_scenario(two_flows, mode=MODE_ARCUS, duration_cycles=30_000)
    table = ProfileTable()
    add_profile(table, scenario, [f1], 50.0, [45.0])
    add_profile(table, scenario, [f1, f2], 40.0, [15.0, 25.0])

    simulation = Simulation(scenario, profiles=table)
    report = simulation.report(simulation.run())
    rejected = report.flow(2)
    assert not rejected['admitted']
    assert rejected['reject_reason'] == 'capacity'
    assert rejected['injected'] == 0
    assert rejected['attainment'] is None
    assert report.flow(1)['admitted']
    assert report.flow(1)['injected'] > 0
