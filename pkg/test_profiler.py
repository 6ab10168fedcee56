"""
Tests for profile keys, lookup, classification and sweeps
"""

import pytest

from acc_slo.models import ChannelConfig, PortConfig, SloMetric, SloTarget
from acc_slo.profiler import (
    ARTIFACT_SCHEMA,
    CapacityProfile,
    ProfileKey,
    ProfilePoint,
    ProfileTable,
    ProfileTag,
    RoleKey,
    SweepPlan,
    classify,
    profile_point,
    quantize_load,
    run_sweep,
    setting_key,
    size_bound,
)
from acc_slo.validators import ConfigurationError

SETTING = setting_key(ChannelConfig(), PortConfig())


def profile(total, shares, sizes=None):
    return CapacityProfile(total_gbps=total, shares=tuple(shares), offered=tuple(shares),
                           sizes=tuple(sizes or [1500] * len(shares)))


def role(size, load, path='function_call'):
    return RoleKey(size, load, path)


def test_loads_round_up_to_the_grid():
    assert quantize_load(0.1) == 0.1
    assert quantize_load(0.1001) == 0.101
    assert quantize_load(0.131072) == 0.132


def test_profile_key_sorts_roles():
    a = ProfileKey('acc', (role(1500, 0.2), role(64, 0.1)), SETTING)
    b = ProfileKey('acc', (role(64, 0.1), role(1500, 0.2)), SETTING)
    assert a == b
    assert a.as_string().startswith('acc|64@0.100/function_call;1500@0.200/function_call|')


def test_setting_key_distinguishes_channels():
    assert setting_key(ChannelConfig(credits=8), PortConfig()) != SETTING


def test_lookup_exact_hit():
    table = ProfileTable()
    key = ProfileKey('acc', (role(1500, 0.3),), SETTING)
    table.add(key, profile(40.0, [30.0]))
    found_key, found = table.lookup('acc', [role(1500, 0.3)], SETTING)
    assert found_key == key
    assert found.total_gbps == 40.0


def test_lookup_nearest_prefers_covering_loads():
    table = ProfileTable()
    table.add(ProfileKey('acc', (role(1500, 0.2),), SETTING), profile(45.0, [20.0]))
    table.add(ProfileKey('acc', (role(1500, 0.4),), SETTING), profile(42.0, [40.0]))
    key, _found = table.lookup('acc', [role(1500, 0.25)], SETTING)
    assert key.roles[0].load == 0.4


def test_lookup_nearest_by_log_size():
    table = ProfileTable()
    table.add(ProfileKey('acc', (role(256, 0.5),), SETTING), profile(30.0, [30.0]))
    table.add(ProfileKey('acc', (role(4096, 0.5),), SETTING), profile(50.0, [50.0]))
    key, _found = table.lookup('acc', [role(512, 0.5)], SETTING)
    assert key.roles[0].size == 256


def test_lookup_equal_distance_prefers_smaller_sizes():
    table = ProfileTable()
    table.add(ProfileKey('acc', (role(512, 0.5),), SETTING), profile(30.0, [30.0]))
    table.add(ProfileKey('acc', (role(2048, 0.5),), SETTING), profile(20.0, [20.0]))
    key, _found = table.lookup('acc', [role(1024, 0.5)], SETTING)
    assert key.roles[0].size == 512


def test_lookup_misses_across_role_count_path_and_setting():
    table = ProfileTable()
    table.add(ProfileKey('acc', (role(1500, 0.3),), SETTING), profile(40.0, [30.0]))
    assert table.lookup('acc', [role(1500, 0.3), role(64, 0.1)], SETTING) is None
    assert table.lookup('acc', [role(1500, 0.3, 'inline_nic_rx')], SETTING) is None
    assert table.lookup('acc', [role(1500, 0.3)], 'other') is None
    assert table.lookup('other', [role(1500, 0.3)], SETTING) is None


def test_classify_against_role_demands():
    slos = [SloTarget(SloMetric.THROUGHPUT_GBPS, 10.0), SloTarget(SloMetric.THROUGHPUT_GBPS, 20.0)]
    assert classify(profile(32.0, [12.0, 20.0]), slos) == ProfileTag.SLO_FRIENDLY
    assert classify(profile(25.0, [12.0, 13.0]), slos) == ProfileTag.SLO_VIOLATING
    assert classify(profile(32.0, [12.0, 19.9]), slos, tolerance=0.01) == ProfileTag.SLO_FRIENDLY
    with pytest.raises(ConfigurationError):
        classify(profile(32.0, [12.0]), slos)


def test_classify_iops_roles_use_message_size():
    slos = [SloTarget(SloMetric.THROUGHPUT_IOPS, 300_000)]
    # 300 K x 4 KiB is 9.83 Gbps
    assert classify(profile(12.0, [10.0], sizes=[4096]), slos) == ProfileTag.SLO_FRIENDLY
    assert classify(profile(12.0, [9.0], sizes=[4096]), slos) == ProfileTag.SLO_VIOLATING


def test_size_bound_only_for_dominant_large_role():
    assert size_bound([4096, 1024]) == 1024
    assert size_bound([2048, 1024]) == 0
    assert size_bound([4096]) == 0


def test_artifact_document_round_trip():
    table = ProfileTable()
    table.add(ProfileKey('acc', (role(64, 0.2), role(256, 0.1)), SETTING), profile(15.0, [5.0, 10.0], [64, 256]))
    document = table.to_document()
    assert document['schema'] == ARTIFACT_SCHEMA
    restored = ProfileTable.from_document(document)
    assert restored.entries == table.entries
    assert restored.accelerators() == ['acc']


def test_artifact_schema_is_checked():
    with pytest.raises(ConfigurationError):
        ProfileTable.from_document({'schema': 'something-else', 'entries': []})


def test_sweep_plan_grid_points():
    plan = SweepPlan(acc_id='acc', sizes=(64, 1500), loads=(0.1, 0.5), flow_counts=(1, 2))
    points = plan.points()
    assert len(points) == 8
    assert {len(point.roles) for point in points} == {1, 2}


def test_sweep_plan_validation():
    with pytest.raises(ConfigurationError):
        SweepPlan(acc_id='acc', sizes=())
    with pytest.raises(ConfigurationError):
        SweepPlan(acc_id='acc', run_cycles=1000)


def test_profile_point_measures_saturated_capacity(ipsec):
    point = ProfilePoint('ipsec-32g', (role(64, 0.2),), channel=ChannelConfig(bw_h2d_gbps=128, bw_d2h_gbps=128),
                         run_cycles=64_000)
    measured = profile_point(point, ipsec)
    assert measured.total_gbps == pytest.approx(8.0, rel=0.05)
    assert measured.saturated
    assert measured.sizes == (64,)
    assert measured.offered[0] == pytest.approx(20.0)


def test_unsaturated_point_records_the_load_it_carried(synthetic):
    point = ProfilePoint('synthetic-50g', (role(1500, 0.1), role(256, 0.2)), run_cycles=64_000)
    measured = profile_point(point, synthetic)
    assert not measured.saturated
    assert measured.total_gbps >= sum(measured.offered)
    assert measured.total_gbps == pytest.approx(30.0, rel=0.02)


def test_profile_point_rejects_other_accelerator(synthetic):
    with pytest.raises(ConfigurationError):
        profile_point(ProfilePoint('ipsec-32g', (role(64, 0.2),), run_cycles=64_000), synthetic)


def test_run_sweep_is_order_independent(synthetic, tmp_path):
    plan = SweepPlan(acc_id='synthetic-50g', sizes=(1500,), loads=(0.1, 0.3), flow_counts=(1,), run_cycles=64_000)
    artifact = tmp_path / 'synthetic.json'
    fanned = run_sweep(plan, {'synthetic-50g': synthetic}, artifact_path=str(artifact))
    serial = run_sweep(plan, {'synthetic-50g': synthetic}, parallel=False)
    assert len(fanned) == 2
    assert fanned.entries == serial.entries
    assert artifact.is_file()


def test_run_sweep_needs_the_accelerator_model():
    plan = SweepPlan(acc_id='missing', sizes=(1500,), loads=(0.1,), flow_counts=(1,), run_cycles=64_000)
    with pytest.raises(ConfigurationError):
        run_sweep(plan, {})
