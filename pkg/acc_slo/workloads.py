"""
Workload Generators
Poisson or fixed-gap injection of message bursts, drawn lazily from a
per-flow random stream
"""

import math
from fractions import Fraction

import numpy as np

from .utils import as_fraction

BLOCK = 1024


def mean_burst(burstiness):
    """Bursts are uniform on 1..burstiness messages"""
    return (1 + burstiness) / 2


class ArrivalStream:
    """
    Lazy arrival trace for one flow

    Message rate = load * reference / mean size; each injection event carries
    a burst of 1..burstiness messages, so events arrive at
    message rate / mean burst. next_event() returns (cycle, sizes) or None
    once the stream passes stop_cycle.
    """

    def __init__(self, pattern, rng, reference_gbps, cycle_ns, start_cycle=0, stop_cycle=None):
        self.pattern = pattern
        self.rng = rng
        self.cycle_ns = cycle_ns
        self.stop_cycle = stop_cycle
        self._sizes = np.empty(0, dtype=int)
        self._bursts = np.empty(0, dtype=int)
        self._gaps = np.empty(0)
        self._pos = 0
        self._size_pos = 0

        dist = pattern.msg_size_dist
        if pattern.load <= 0:
            self.gap_cycles = None
        else:
            # bits per event / Gbps = ns per event
            event_bits = as_fraction(dist.mean) * 8 * as_fraction(mean_burst(pattern.burstiness))
            self.gap_cycles = event_bits / (as_fraction(pattern.load) * as_fraction(reference_gbps)) / cycle_ns
        self._time = Fraction(start_cycle) if pattern.injection == 'fixed' else float(start_cycle)

    @property
    def exhausted(self):
        return self.gap_cycles is None

    def _refill_blocks(self):
        self._sizes = self.pattern.msg_size_dist.draw(self.rng, BLOCK)
        if self.pattern.burstiness > 1:
            self._bursts = self.rng.integers(1, self.pattern.burstiness + 1, size=BLOCK)
        else:
            self._bursts = np.ones(BLOCK, dtype=int)
        if self.pattern.injection == 'poisson':
            self._gaps = self.rng.exponential(float(self.gap_cycles), size=BLOCK)
        self._pos = 0
        self._size_pos = 0

    def next_event(self):
        if self.gap_cycles is None:
            return None
        if self._pos >= len(self._bursts):
            self._refill_blocks()

        if self.pattern.injection == 'fixed':
            self._time += self.gap_cycles
        else:
            self._time += float(self._gaps[self._pos])
        cycle = math.ceil(self._time)
        if self.stop_cycle is not None and cycle >= self.stop_cycle:
            self.gap_cycles = None
            return None

        burst = int(self._bursts[self._pos])
        self._pos += 1
        sizes = []
        for _ in range(burst):
            if self._size_pos >= len(self._sizes):
                self._sizes = self.pattern.msg_size_dist.draw(self.rng, BLOCK)
                self._size_pos = 0
            sizes.append(int(self._sizes[self._size_pos]))
            self._size_pos += 1
        return cycle, sizes

    def stop(self):
        self.gap_cycles = None


def generate_arrivals(pattern, seed, duration_cycles, reference_gbps, cycle_ns, start_cycle=0):
    """
    Full arrival trace of a pattern over [start_cycle, start_cycle + duration)

    Args:
        pattern (TrafficPattern): sizes, load, burstiness, injection process
        seed (int|Generator): seed or numpy Generator
        duration_cycles (int): trace length
        reference_gbps (float): line rate that load is a fraction of
        cycle_ns (int): cycle duration

    Returns:
        list: (cycle, [sizes]) per injection event, deterministic per (pattern, seed)
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    stream = ArrivalStream(pattern, rng, reference_gbps, cycle_ns,
                           start_cycle=start_cycle, stop_cycle=start_cycle + duration_cycles)
    trace = []
    while True:
        event = stream.next_event()
        if event is None:
            return trace
        trace.append(event)
