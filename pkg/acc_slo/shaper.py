"""
Per-Flow Token-Bucket Shaper
Programmable registers, lazy refill, message re-sizing, rate-to-register
derivation and the register file with modeled commit latency
"""

import logging
import math
from dataclasses import dataclass, asdict
from enum import Enum
from fractions import Fraction

from . import settings
from .engine import EventKind
from .models import SloMetric
from .utils import as_fraction
from .validators import ConfigurationError, UnachievableRateError, validate_registers

logger = logging.getLogger(__name__)

MAX_RATE_ERROR = Fraction(1, 1000)


class ShaperMode(str, Enum):
    GBPS = 'gbps'  # token = 1 byte
    IOPS = 'iops'  # token = 1 message


@dataclass(frozen=True)
class ShaperRegisters:
    bkt_size: int
    refill_rate: int
    interval: int
    mode: ShaperMode = ShaperMode.GBPS
    max_msg_bytes: int = 0

    def __post_init__(self):
        validate_registers(self.bkt_size, self.refill_rate, self.interval)
        if self.max_msg_bytes < 0:
            raise ConfigurationError('max_msg_bytes must be >= 0', code='registers')

    def rate(self, cycle_ns):
        """Long-run rate in Gbps (GBPS mode) or IOPS (IOPS mode)"""
        per_cycle = Fraction(self.refill_rate, self.interval)
        if self.mode == ShaperMode.GBPS:
            return float(per_cycle * 8 / cycle_ns)
        return float(per_cycle * 10 ** 9 / cycle_ns)

    def as_dict(self):
        data = asdict(self)
        data['mode'] = self.mode.value
        return data


@dataclass(frozen=True)
class Admit:
    pass


@dataclass(frozen=True)
class Defer:
    next_eligible_cycle: int


ADMIT = Admit()


class TokenBucket:
    """
    TokenBucketState: tokens, last_refill, regs

    Refill is lazy: on every access, whole intervals elapsed since last_refill
    are credited at once and last_refill advances by whole intervals only.
    The bucket starts full.
    """

    def __init__(self, regs, start_cycle=0):
        self.regs = regs
        self.tokens = regs.bkt_size
        self.last_refill = start_cycle

    def refill(self, now):
        if now < self.last_refill:
            return self
        elapsed = (now - self.last_refill) // self.regs.interval
        if elapsed:
            self.tokens = min(self.regs.bkt_size, self.tokens + elapsed * self.regs.refill_rate)
            self.last_refill += elapsed * self.regs.interval
        return self

    def cost(self, msg_bytes):
        return msg_bytes if self.regs.mode == ShaperMode.GBPS else 1

    def check_admissible(self, msg_bytes):
        cost = self.cost(msg_bytes)
        if cost > self.regs.bkt_size:
            raise ConfigurationError(
                f'Message cost {cost} exceeds Bkt_Size {self.regs.bkt_size} and can never be admitted',
                code='unadmittable',
            )
        return cost

    def try_fetch(self, msg_bytes, now):
        """
        Admit (tokens charged) or Defer to the first refill cycle at which the
        cost becomes affordable
        """
        cost = self.check_admissible(msg_bytes)
        self.refill(now)
        if self.tokens >= cost:
            self.tokens -= cost
            return ADMIT
        return Defer(self.next_eligible(cost))

    def next_eligible(self, cost):
        missing = cost - self.tokens
        refills = -(-missing // self.regs.refill_rate)
        return self.last_refill + refills * self.regs.interval

    def apply(self, regs, now):
        """Commit new registers; in-flight tokens preserved, clamped to the new bucket"""
        self.refill(now)
        self.regs = regs
        self.tokens = min(self.tokens, regs.bkt_size)


class SoftwareTokenBucket(TokenBucket):
    """
    Host-software shaper: the bucket is refilled by a coarse periodic timer
    whose firings land uniformly within +-jitter of their nominal time
    """

    def __init__(self, regs, rng, jitter_cycles, start_cycle=0):
        if 2 * jitter_cycles >= regs.interval:
            raise ConfigurationError('Timer jitter must be below half the timer period', code='jitter')
        super().__init__(regs, start_cycle=start_cycle)
        self.rng = rng
        self.jitter_cycles = jitter_cycles
        self._tick_index = 1
        self._start = start_cycle
        self._upcoming = []

    def _tick_time(self, offset):
        while len(self._upcoming) <= offset:
            k = self._tick_index + len(self._upcoming)
            jitter = int(self.rng.integers(-self.jitter_cycles, self.jitter_cycles + 1))
            self._upcoming.append(max(self._start + 1, self._start + k * self.regs.interval + jitter))
        return self._upcoming[offset]

    def refill(self, now):
        while self._tick_time(0) <= now:
            self.last_refill = self._upcoming.pop(0)
            self._tick_index += 1
            self.tokens = min(self.regs.bkt_size, self.tokens + self.regs.refill_rate)
        return self

    def next_eligible(self, cost):
        missing = cost - self.tokens
        refills = -(-missing // self.regs.refill_rate)
        return self._tick_time(refills - 1)

    def apply(self, regs, now):
        self.refill(now)
        self.regs = regs
        self.tokens = min(self.tokens, regs.bkt_size)


def resize(msg_bytes, max_msg_bytes):
    """
    Split a message into segments of at most max_msg_bytes (order preserved)

    Example: resize(4096, 1500) -> [1500, 1500, 1096]
    """
    if max_msg_bytes <= 0:
        raise ConfigurationError('max_msg_bytes must be positive', code='resize')
    full, rest = divmod(msg_bytes, max_msg_bytes)
    return [max_msg_bytes] * full + ([rest] if rest else [])


def _tokens_per_cycle(target, cycle_ns):
    if target.metric == SloMetric.THROUGHPUT_GBPS:
        return as_fraction(target.value) * cycle_ns / 8, ShaperMode.GBPS
    if target.metric == SloMetric.THROUGHPUT_IOPS:
        return as_fraction(target.value) * cycle_ns / 10 ** 9, ShaperMode.IOPS
    raise ConfigurationError('Only throughput targets map to shaper registers', code='slo')


def _to_rate(per_cycle, mode, cycle_ns):
    if mode == ShaperMode.GBPS:
        return float(per_cycle * 8 / cycle_ns)
    return float(per_cycle * 10 ** 9 / cycle_ns)


def minimum_rate(metric, cycle_ns):
    """
    Slowest throughput rate params_for_rate always expresses: two tokens per
    MAX_INTERVAL_CYCLES, in Gbps or IOPS for the given metric
    """
    mode = ShaperMode.IOPS if metric == SloMetric.THROUGHPUT_IOPS else ShaperMode.GBPS
    return _to_rate(Fraction(2, settings.MAX_INTERVAL_CYCLES), mode, cycle_ns)


def params_for_rate(target, clock, interval=None, max_cost=0, max_msg_bytes=0,
                    bucket_refills=settings.DEFAULT_BUCKET_REFILLS):
    """
    Derive shaper registers for a throughput target

    Exact rationals are used when the rate has a small denominator: the
    interval is the smallest multiple of that denominator at or above the
    default interval, so 1000 Gbps at 4 ns/cycle gives Interval=64 and
    Refill_Rate=32000. Otherwise intervals are doubled until the rounding error
    is within 0.1%.

    Args:
        target (SloTarget): ThroughputGbps or ThroughputIops target
        clock (SimClock): supplies cycle_ns
        interval (int): force a specific Interval
        max_cost (int): largest single-message cost the bucket must hold
        max_msg_bytes (int): re-size threshold, 0 disables re-sizing
        bucket_refills (int): Bkt_Size default in refills

    Returns:
        ShaperRegisters

    Raises:
        UnachievableRateError: rate too low for Interval <= MAX_INTERVAL_CYCLES
    """
    cycle_ns = clock.cycle_ns
    per_cycle, mode = _tokens_per_cycle(target, cycle_ns)
    if per_cycle <= 0:
        raise ConfigurationError('Shaping rate must be positive', code='slo')

    refill = None
    if interval is not None:
        refill = max(1, round(per_cycle * interval))
        if abs(Fraction(refill, interval) - per_cycle) / per_cycle > MAX_RATE_ERROR:
            raise UnachievableRateError(
                f'Rate {target.value} is not expressible with Interval={interval}',
                closest_rate=_to_rate(Fraction(refill, interval), mode, cycle_ns),
            )
    else:
        exact = per_cycle.limit_denominator(settings.MAX_INTERVAL_CYCLES)
        if exact == per_cycle:
            q = exact.denominator
            interval = q * math.ceil(settings.DEFAULT_INTERVAL_CYCLES / q)
            if interval <= settings.MAX_INTERVAL_CYCLES:
                refill = int(exact * interval)
        if refill is None:
            interval = settings.DEFAULT_INTERVAL_CYCLES
            while interval <= settings.MAX_INTERVAL_CYCLES:
                candidate = round(per_cycle * interval)
                if candidate >= 1 and abs(Fraction(candidate, interval) - per_cycle) / per_cycle <= MAX_RATE_ERROR:
                    refill = candidate
                    break
                interval *= 2
        if refill is None:
            closest = Fraction(max(1, round(per_cycle * settings.MAX_INTERVAL_CYCLES)),
                               settings.MAX_INTERVAL_CYCLES)
            raise UnachievableRateError(
                f'Rate {target.value} is unachievable at {cycle_ns} ns/cycle',
                closest_rate=_to_rate(closest, mode, cycle_ns),
            )

    bkt_size = max(bucket_refills * refill, max_cost if mode == ShaperMode.GBPS else 1)
    return ShaperRegisters(
        bkt_size=int(bkt_size),
        refill_rate=int(refill),
        interval=int(interval),
        mode=mode,
        max_msg_bytes=max_msg_bytes,
    )


class ReferenceTokenBucket:
    """
    Cycle-by-cycle token bucket used as an oracle for the lazy implementation.
    Tokens are added at every cycle that is a whole number of intervals after
    the start; messages are admitted in FIFO order as soon as tokens allow.
    """

    def __init__(self, regs, start_cycle=0):
        self.regs = regs
        self.start_cycle = start_cycle

    def admit_cycles(self, arrivals):
        """
        Args:
            arrivals (list): (arrival_cycle, msg_bytes) sorted by cycle

        Returns:
            list: admit cycle per message
        """
        regs = self.regs
        tokens = regs.bkt_size
        cycle = self.start_cycle
        admitted = []
        pending = list(arrivals)
        head = 0
        while head < len(pending):
            if cycle > self.start_cycle and (cycle - self.start_cycle) % regs.interval == 0:
                tokens = min(regs.bkt_size, tokens + regs.refill_rate)
            while head < len(pending) and pending[head][0] <= cycle:
                cost = pending[head][1] if regs.mode == ShaperMode.GBPS else 1
                if tokens < cost:
                    break
                tokens -= cost
                admitted.append(cycle)
                head += 1
            cycle += 1
        return admitted


def admit_cycles(regs, arrivals, start_cycle=0):
    """Admission schedule of a FIFO trace through the lazy TokenBucket"""
    bucket = TokenBucket(regs, start_cycle=start_cycle)
    now = start_cycle
    admitted = []
    for arrival, msg_bytes in arrivals:
        now = max(now, arrival)
        while True:
            decision = bucket.try_fetch(msg_bytes, now)
            if decision is ADMIT:
                admitted.append(now)
                break
            now = decision.next_eligible_cycle
    return admitted


class RegisterFile:
    """
    MMIO view of all per-flow shapers

    A write commits exactly reconfig_latency cycles later; a later write to
    the same flow supersedes an uncommitted one. The dataplane keeps running
    on the old registers until commit.
    """

    def __init__(self, sim, reconfig_latency=settings.RECONFIG_LATENCY_CYCLES, on_commit=None):
        self.sim = sim
        self.reconfig_latency = reconfig_latency
        self.on_commit = on_commit
        self.buckets = {}
        self.history = []
        self._pending = {}
        self._generation = 0

    def install(self, flow_id, bucket):
        self.buckets[flow_id] = bucket

    def remove(self, flow_id):
        self.buckets.pop(flow_id, None)
        self._pending.pop(flow_id, None)

    def read_register(self, flow_id, name):
        return getattr(self.buckets[flow_id].regs, name)

    def registers(self, flow_id):
        return self.buckets[flow_id].regs

    def pending_write(self, flow_id):
        entry = self._pending.get(flow_id)
        return entry[1] if entry else None

    def write_register(self, flow_id, regs, now):
        """
        Schedule a register commit

        Returns:
            Event: the reconfig-commit event
        """
        if flow_id not in self.buckets:
            raise ConfigurationError(f'Flow {flow_id} has no shaper', code='unknown-flow')
        if not isinstance(regs, ShaperRegisters):
            raise ConfigurationError('Register write needs ShaperRegisters', code='registers')

        self._generation += 1
        self._pending[flow_id] = (self._generation, regs)
        commit_at = now + self.reconfig_latency
        self.history.append({
            'flow_id': flow_id,
            'written_at': now,
            'commit_at': commit_at,
            'registers': regs.as_dict(),
        })
        return self.sim.call_at(
            commit_at, EventKind.RECONFIG_COMMIT, self._commit, flow_id, self._generation,
            detail=f'flow={flow_id}',
        )

    def _commit(self, flow_id, generation):
        entry = self._pending.get(flow_id)
        if entry is None or entry[0] != generation:
            return
        del self._pending[flow_id]
        regs = entry[1]
        self.buckets[flow_id].apply(regs, self.sim.now)
        logger.info(f'Registers committed for flow {flow_id} at cycle {self.sim.now}: '
                    f'refill={regs.refill_rate}/{regs.interval} bkt={regs.bkt_size}')
        if self.on_commit:
            self.on_commit(flow_id, regs)
