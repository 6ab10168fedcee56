"""
Tests for the token-bucket shaper, rate derivation and register commits
"""

import numpy as np
import pytest

from acc_slo import settings
from acc_slo.engine import EventKind, SimClock, Simulator
from acc_slo.models import SloMetric, SloTarget
from acc_slo.shaper import (
    ADMIT,
    ReferenceTokenBucket,
    RegisterFile,
    ShaperMode,
    ShaperRegisters,
    SoftwareTokenBucket,
    TokenBucket,
    admit_cycles,
    minimum_rate,
    params_for_rate,
    resize,
)
from acc_slo.validators import ConfigurationError, UnachievableRateError


def gbps(value):
    return SloTarget(SloMetric.THROUGHPUT_GBPS, value)


def iops(value):
    return SloTarget(SloMetric.THROUGHPUT_IOPS, value)


def delivered_rate(regs, msg_bytes, intervals, cycle_ns=4):
    """Long-run rate of an always-backlogged flow through a lazy bucket"""
    bucket = TokenBucket(regs)
    horizon = intervals * regs.interval
    now, admitted = 0, 0
    while True:
        decision = bucket.try_fetch(msg_bytes, now)
        if decision is ADMIT:
            admitted += 1
            continue
        now = decision.next_eligible_cycle
        if now > horizon:
            break
    span_ns = horizon * cycle_ns
    if regs.mode == ShaperMode.GBPS:
        return admitted * msg_bytes * 8 / span_ns
    return admitted * 1e9 / span_ns


def test_params_for_rate_line_rate_anchor(clock):
    regs = params_for_rate(gbps(1000), clock)
    assert regs.interval == 64
    assert regs.refill_rate == 32000
    assert regs.mode == ShaperMode.GBPS


def test_params_for_rate_iops(clock):
    regs = params_for_rate(iops(300_000), clock)
    assert (regs.interval, regs.refill_rate) == (2500, 3)
    assert regs.mode == ShaperMode.IOPS
    assert regs.rate(clock.cycle_ns) == pytest.approx(300_000)


def test_params_for_rate_bucket_holds_largest_message(clock):
    regs = params_for_rate(gbps(1), clock, max_cost=1500)
    assert regs.refill_rate == 32
    assert regs.bkt_size == 1500
    assert params_for_rate(gbps(1), clock).bkt_size == 4 * 32


def test_params_for_rate_approximates_awkward_rates(clock):
    regs = params_for_rate(gbps(3.14159), clock)
    assert regs.rate(clock.cycle_ns) == pytest.approx(3.14159, rel=1e-3)


def test_params_for_rate_forced_interval(clock):
    regs = params_for_rate(gbps(10), clock, interval=12500)
    assert regs.interval == 12500
    assert regs.rate(clock.cycle_ns) == pytest.approx(10)


def test_unachievable_rate_reports_closest(clock):
    with pytest.raises(UnachievableRateError) as excinfo:
        params_for_rate(iops(1), clock)
    assert excinfo.value.closest_rate > 1
    regs = params_for_rate(iops(excinfo.value.closest_rate), clock)
    assert regs.interval <= settings.MAX_INTERVAL_CYCLES


@pytest.mark.parametrize('metric', [SloMetric.THROUGHPUT_GBPS, SloMetric.THROUGHPUT_IOPS])
def test_slowest_rate_is_expressible(clock, metric):
    floor = minimum_rate(metric, clock.cycle_ns)
    regs = params_for_rate(SloTarget(metric, floor), clock)
    assert regs.rate(clock.cycle_ns) == pytest.approx(floor)


def test_latency_target_has_no_registers(clock):
    with pytest.raises(ConfigurationError):
        params_for_rate(SloTarget(SloMetric.TAIL_LATENCY, 1000), clock)


def test_register_validation():
    with pytest.raises(ConfigurationError):
        ShaperRegisters(bkt_size=10, refill_rate=20, interval=64)
    with pytest.raises(ConfigurationError):
        ShaperRegisters(bkt_size=10, refill_rate=0, interval=64)
    with pytest.raises(ConfigurationError):
        ShaperRegisters(bkt_size=10, refill_rate=1, interval=0)


@pytest.mark.parametrize('target,msg_bytes', [
    (gbps(1), 64),
    (gbps(10), 64),
    (gbps(100), 1500),
    (gbps(1000), 1500),
    (iops(250_000), 4096),
])
def test_delivered_rate_within_one_percent(clock, target, msg_bytes):
    regs = params_for_rate(target, clock, max_cost=msg_bytes)
    measured = delivered_rate(regs, msg_bytes, intervals=1000)
    assert abs(measured - target.value) / target.value <= 0.01


def test_bucket_starts_full_and_defers_to_refill():
    regs = ShaperRegisters(bkt_size=100, refill_rate=10, interval=8)
    bucket = TokenBucket(regs)
    assert bucket.try_fetch(100, 0) is ADMIT
    decision = bucket.try_fetch(25, 0)
    # three refills of 10 tokens
    assert decision.next_eligible_cycle == 24
    assert bucket.try_fetch(25, 23) != ADMIT
    assert bucket.try_fetch(25, 24) is ADMIT
    assert bucket.tokens == 5


def test_message_larger_than_bucket_is_a_config_error():
    bucket = TokenBucket(ShaperRegisters(bkt_size=100, refill_rate=10, interval=8))
    with pytest.raises(ConfigurationError):
        bucket.try_fetch(101, 0)


def test_iops_mode_charges_one_token_per_message():
    bucket = TokenBucket(ShaperRegisters(bkt_size=2, refill_rate=1, interval=100, mode=ShaperMode.IOPS))
    assert bucket.try_fetch(65536, 0) is ADMIT
    assert bucket.try_fetch(4096, 0) is ADMIT
    assert bucket.try_fetch(64, 0).next_eligible_cycle == 100


def random_case(rng):
    mode = ShaperMode.GBPS if rng.random() < 0.8 else ShaperMode.IOPS
    interval = int(rng.integers(1, 17))
    refill = int(rng.integers(1, 21))
    bkt = int(rng.integers(refill, 4 * refill + 1))
    regs = ShaperRegisters(bkt_size=bkt, refill_rate=refill, interval=interval, mode=mode)
    count = int(rng.integers(1, 9))
    cycles = np.sort(rng.integers(0, 200, size=count))
    sizes = rng.integers(1, bkt + 1, size=count)
    return regs, [(int(c), int(s)) for c, s in zip(cycles, sizes)]


def test_lazy_bucket_matches_cycle_by_cycle_reference():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        regs, arrivals = random_case(rng)
        assert admit_cycles(regs, arrivals) == ReferenceTokenBucket(regs).admit_cycles(arrivals), (regs, arrivals)


def test_admitted_bytes_stay_inside_the_envelope():
    rng = np.random.default_rng(7)
    for _ in range(500):
        regs = ShaperRegisters(bkt_size=int(rng.integers(64, 512)), refill_rate=int(rng.integers(1, 64)),
                               interval=int(rng.integers(1, 32)))
        arrivals = [(int(c), int(rng.integers(1, regs.bkt_size + 1)))
                    for c in np.sort(rng.integers(0, 2000, size=40))]
        admits = admit_cycles(regs, arrivals)
        admitted = list(zip(admits, (size for _c, size in arrivals)))
        for start in range(0, admits[-1] + 1, 37):
            for width in (1, regs.interval, 5 * regs.interval, 400):
                window = sum(size for cycle, size in admitted if start <= cycle < start + width)
                assert window <= regs.bkt_size + regs.refill_rate * -(-width // regs.interval)


def test_tokens_stay_within_bounds():
    rng = np.random.default_rng(11)
    regs = ShaperRegisters(bkt_size=300, refill_rate=40, interval=16)
    bucket = TokenBucket(regs)
    now = 0
    for _ in range(5000):
        now += int(rng.integers(0, 40))
        bucket.try_fetch(int(rng.integers(1, 301)), now)
        assert 0 <= bucket.tokens <= regs.bkt_size


def test_resize_preserves_order_and_bytes():
    assert resize(4096, 1500) == [1500, 1500, 1096]
    assert resize(1000, 1500) == [1000]
    assert resize(3000, 1500) == [1500, 1500]
    with pytest.raises(ConfigurationError):
        resize(100, 0)


def test_software_bucket_refills_on_jittered_timer():
    regs = ShaperRegisters(bkt_size=1000, refill_rate=500, interval=1000)
    bucket = SoftwareTokenBucket(regs, np.random.default_rng(1), jitter_cycles=100)
    assert bucket.try_fetch(1000, 0) is ADMIT
    eligible = bucket.try_fetch(500, 0).next_eligible_cycle
    assert 900 <= eligible <= 1100
    assert bucket.try_fetch(500, eligible) is ADMIT


def test_software_bucket_rejects_wide_jitter():
    regs = ShaperRegisters(bkt_size=1000, refill_rate=500, interval=1000)
    with pytest.raises(ConfigurationError):
        SoftwareTokenBucket(regs, np.random.default_rng(1), jitter_cycles=500)


def test_register_write_commits_after_reconfig_latency():
    sim = Simulator()
    old = ShaperRegisters(bkt_size=100, refill_rate=10, interval=8)
    new = ShaperRegisters(bkt_size=200, refill_rate=20, interval=8)
    registers = RegisterFile(sim, reconfig_latency=2500)
    registers.install(1, TokenBucket(old))

    registers.write_register(1, new, sim.now)
    assert registers.pending_write(1) == new
    sim.run_until(2499)
    assert registers.registers(1) == old
    sim.run_until(2500)
    assert registers.registers(1) == new
    assert registers.read_register(1, 'refill_rate') == 20
    assert registers.pending_write(1) is None
    assert registers.history[0]['commit_at'] == 2500


def test_later_write_supersedes_uncommitted_one():
    sim = Simulator()
    base = ShaperRegisters(bkt_size=100, refill_rate=10, interval=8)
    first = ShaperRegisters(bkt_size=100, refill_rate=20, interval=8)
    second = ShaperRegisters(bkt_size=100, refill_rate=30, interval=8)
    committed = []
    registers = RegisterFile(sim, reconfig_latency=2500, on_commit=lambda fid, regs: committed.append(regs))
    registers.install(1, TokenBucket(base))

    registers.write_register(1, first, 0)
    sim.call_at(100, EventKind.CONTROL_TICK, registers.write_register, 1, second, 100)
    sim.run_until(2550)
    assert registers.registers(1) == base
    sim.run_until(2600)
    assert registers.registers(1) == second
    assert committed == [second]


def test_register_write_to_unknown_flow():
    registers = RegisterFile(Simulator())
    with pytest.raises(ConfigurationError):
        registers.write_register(9, ShaperRegisters(bkt_size=1, refill_rate=1, interval=1), 0)


class BackloggedFetcher:
    """Fetches fixed-size messages as fast as the bucket allows"""

    def __init__(self, sim, bucket, msg_bytes):
        self.sim = sim
        self.bucket = bucket
        self.msg_bytes = msg_bytes
        self.token = 0
        self.admitted = []

    def kick(self, *_args):
        self.token += 1
        self.sim.call_at(self.sim.now, EventKind.INJECT, self.fetch, self.token)

    def fetch(self, token):
        if token != self.token:
            return
        while True:
            decision = self.bucket.try_fetch(self.msg_bytes, self.sim.now)
            if decision is not ADMIT:
                self.sim.call_at(decision.next_eligible_cycle, EventKind.TOKEN_REFILL, self.fetch, token)
                return
            self.admitted.append(self.sim.now)

    def rate(self, start, end, cycle_ns=4):
        count = sum(1 for cycle in self.admitted if start <= cycle < end)
        return count * self.msg_bytes * 8 / ((end - start) * cycle_ns)


def test_rate_change_holds_old_rate_until_commit():
    clock = SimClock(cycle_ns=4)
    old = params_for_rate(gbps(10), clock)
    new = params_for_rate(gbps(20), clock)
    sim = Simulator()
    bucket = TokenBucket(old)
    fetcher = BackloggedFetcher(sim, bucket, 64)
    registers = RegisterFile(sim, reconfig_latency=2500, on_commit=fetcher.kick)
    registers.install(1, bucket)
    fetcher.kick()

    write_at = 1000 * old.interval
    sim.call_at(write_at, EventKind.CONTROL_TICK, registers.write_register, 1, new, write_at)
    commit_at = write_at + 2500
    settle = commit_at + 10 * new.interval
    sim.run_until(settle + 1000 * new.interval)

    assert fetcher.rate(write_at // 2, commit_at) == pytest.approx(10, rel=0.01)
    assert fetcher.rate(settle, settle + 1000 * new.interval) == pytest.approx(20, rel=0.01)
    # nothing stalls across the commit
    after = [cycle for cycle in fetcher.admitted if cycle >= commit_at]
    assert after and after[0] - commit_at <= new.interval
    assert fetcher.admitted == sorted(fetcher.admitted)
