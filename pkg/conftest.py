"""
Shared fixtures: accelerator models from the shipped fixtures and small
factories for flows and scenarios
"""

import pytest

from acc_slo.engine import SimClock
from acc_slo.models import (
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
from acc_slo.scenarios import accelerator_fixture
from acc_slo.serializers import accelerator_from_document


@pytest.fixture
def clock():
    return SimClock(cycle_ns=4)


@pytest.fixture
def ipsec():
    return accelerator_from_document(accelerator_fixture('ipsec-32g'))


@pytest.fixture
def synthetic():
    return accelerator_from_document(accelerator_fixture('synthetic-50g'))


@pytest.fixture
def make_flow():
    def factory(flow_id, size=1500, load=0.1, slo_gbps=10.0, acc_id='synthetic-50g',
                path=PathMode.FUNCTION_CALL, injection='fixed', metric=SloMetric.THROUGHPUT_GBPS, **extra):
        return FlowSpec(
            flow_id=flow_id,
            vm_id=f'vm{flow_id}',
            acc_id=acc_id,
            path=path,
            pattern=TrafficPattern(msg_size_dist=SizeDistribution(kind='fixed', size=size), load=load,
                                   injection=injection),
            slo=SloTarget(metric=metric, value=slo_gbps),
            **extra,
        )
    return factory


@pytest.fixture
def make_scenario(synthetic):
    def factory(flows, mode=MODE_BASELINE_RR, accelerators=None, duration_cycles=50_000, **extra):
        return ScenarioSpec(
            name='unit',
            accelerators=tuple(accelerators or (synthetic,)),
            flows=tuple(flows),
            channel=extra.pop('channel', ChannelConfig(bw_h2d_gbps=128.0, bw_d2h_gbps=128.0)),
            port=extra.pop('port', PortConfig()),
            mode=mode,
            duration_cycles=duration_cycles,
            **extra,
        )
    return factory
