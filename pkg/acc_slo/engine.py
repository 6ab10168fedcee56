"""
Discrete-Event Simulation Kernel
Integer cycle clock, FIFO-stable event queue and per-flow seeded random streams
"""

import hashlib
import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import settings
from .utils import stable_key

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Kernel misuse, e.g. scheduling into the past. Always a simulator bug."""


class EventKind(str, Enum):
    INJECT = 'inject'
    TOKEN_REFILL = 'token-refill'
    FABRIC_GRANT = 'fabric-grant'
    ACCEL_START = 'accel-start'
    ACCEL_DONE = 'accel-done'
    COMPLETION_WRITE = 'completion-write'
    CONTROL_TICK = 'control-tick'
    RECONFIG_COMMIT = 'reconfig-commit'


@dataclass
class SimClock:
    now_cycles: int = 0
    cycle_ns: int = settings.CYCLE_NS

    def __post_init__(self):
        if self.cycle_ns <= 0:
            raise SimulationError('cycle_ns must be positive')

    def us_to_cycles(self, us):
        return int(round(us * 1000 / self.cycle_ns))

    def ns_to_cycles(self, ns):
        return int(round(ns / self.cycle_ns))


@dataclass
class Event:
    fire_at: int
    kind: EventKind
    handler: object = field(default=None, repr=False)
    args: tuple = field(default=(), repr=False)
    detail: str = ''
    seq: int = -1

    def __lt__(self, other):
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)


@dataclass
class SimStats:
    events_scheduled: int
    events_dispatched: int
    events_pending: int
    end_cycle: int
    trace_hash: str
    per_kind: dict

    def as_dict(self):
        return {
            'events_scheduled': self.events_scheduled,
            'events_dispatched': self.events_dispatched,
            'events_pending': self.events_pending,
            'end_cycle': self.end_cycle,
            'trace_hash': self.trace_hash,
            'per_kind': dict(sorted(self.per_kind.items())),
        }


class Simulator:
    """
    Single-threaded event loop

    Events at the same cycle fire in insertion order. Every dispatched event
    is folded into a running trace hash; with record_trace=True the lines are
    also kept for export.
    """

    def __init__(self, seed=0, cycle_ns=settings.CYCLE_NS, record_trace=False):
        self.seed = seed
        self.clock = SimClock(cycle_ns=cycle_ns)
        self.record_trace = record_trace
        self.trace_lines = []
        self.scheduled = 0
        self.dispatched = 0
        self.per_kind = Counter()
        self._queue = []
        self._seq = 0
        self._latest = 0
        self._hash = hashlib.sha256()

    @property
    def now(self):
        return self.clock.now_cycles

    @property
    def pending(self):
        return len(self._queue)

    def schedule(self, event):
        if event.fire_at < self.clock.now_cycles:
            raise SimulationError(
                f'Event {event.kind.value} scheduled at {event.fire_at} < now {self.clock.now_cycles}')
        event.seq = self._seq
        self._seq += 1
        self.scheduled += 1
        self._latest = max(self._latest, event.fire_at)
        heapq.heappush(self._queue, event)
        return event

    def call_at(self, fire_at, kind, handler, *args, detail=''):
        return self.schedule(Event(fire_at=int(fire_at), kind=kind, handler=handler, args=args, detail=detail))

    def call_in(self, delay, kind, handler, *args, detail=''):
        return self.call_at(self.clock.now_cycles + delay, kind, handler, *args, detail=detail)

    def run_until(self, end_cycles):
        """
        Dispatch every event with fire_at <= end_cycles

        Returns:
            SimStats: counters and trace hash at the stop point
        """
        if end_cycles < self.clock.now_cycles:
            raise SimulationError(f'run_until({end_cycles}) is in the past')

        queue = self._queue
        while queue and queue[0].fire_at <= end_cycles:
            event = heapq.heappop(queue)
            self.clock.now_cycles = event.fire_at
            self.dispatched += 1
            self.per_kind[event.kind.value] += 1
            self._record(event)
            if event.handler is not None:
                event.handler(*event.args)

        self.clock.now_cycles = max(self.clock.now_cycles, min(end_cycles, self._latest))
        return self.stats()

    def _record(self, event):
        line = f'{event.fire_at} {event.seq} {event.kind.value} {event.detail}'.rstrip()
        self._hash.update(line.encode('utf-8'))
        self._hash.update(b'\n')
        if self.record_trace:
            self.trace_lines.append(line)

    def stats(self):
        return SimStats(
            events_scheduled=self.scheduled,
            events_dispatched=self.dispatched,
            events_pending=len(self._queue),
            end_cycle=self.clock.now_cycles,
            trace_hash=self._hash.hexdigest(),
            per_kind=dict(self.per_kind),
        )

    def rng(self, *key):
        """
        Independent random stream for a stable key (e.g. ('arrivals', flow_id)).
        Adding a flow never perturbs the draws of another.
        """
        sequence = np.random.SeedSequence(self.seed, spawn_key=(stable_key(*key),))
        return np.random.default_rng(sequence)
