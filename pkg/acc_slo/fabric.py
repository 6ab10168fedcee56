"""
Communication Fabric
Full-duplex interconnect with a shared credit pool, per-flow hardware queues,
port arbiters and the accelerator port server
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

from .engine import EventKind
from .models import Direction
from .utils import bytes_to_cycles
from .validators import ConfigurationError

logger = logging.getLogger(__name__)

# DRR quantum per unit of weight for byte-granular WFQ
WFQ_QUANTUM_BYTES = 1500


@dataclass
class Message:
    """One fetched segment travelling through the fabric"""
    flow_id: int
    request: object
    size: int
    fetched_at: int
    is_last: bool = True
    egress_bytes: int = 0
    egress_leg: object = None
    reserved: bool = False


class FlowQueue:
    """Bounded per-flow FIFO; pushing into a full queue drops and counts"""

    def __init__(self, flow_id, depth):
        if depth < 1:
            raise ConfigurationError('Queue depth must be at least 1', code='depth')
        self.flow_id = flow_id
        self.depth = depth
        self.drops = 0
        self._items = deque()

    def __len__(self):
        return len(self._items)

    @property
    def occupancy(self):
        return len(self._items)

    @property
    def full(self):
        return len(self._items) >= self.depth

    def push(self, item):
        if self.full:
            self.drops += 1
            return False
        self._items.append(item)
        return True

    def pop(self):
        return self._items.popleft()

    def peek(self):
        return self._items[0]


def head_cost_bytes(queue):
    return queue.peek().size


class RoundRobinArbiter:
    """Next ready flow id in cyclic order after the last grant"""

    def __init__(self):
        self.last = None

    def arbitrate(self, ready):
        ids = sorted(q.flow_id for q in ready)
        if not ids:
            raise ConfigurationError('Arbitration needs at least one ready queue', code='arbiter')
        chosen = ids[0]
        if self.last is not None:
            for flow_id in ids:
                if flow_id > self.last:
                    chosen = flow_id
                    break
        self.last = chosen
        return chosen


class DeficitRoundRobinArbiter:
    """
    Deficit round robin, one grant per call

    cost=None charges one unit per message (WRR); otherwise cost(queue)
    returns the head-of-line size in bytes (WFQ).
    """

    def __init__(self, weights, quantum=1, cost=None):
        self.weights = dict(weights)
        self.quantum = quantum
        self.cost = cost or (lambda _queue: 1)
        self.deficit = {}
        self.current = None

    def _quantum(self, flow_id):
        return self.quantum * self.weights.get(flow_id, 1)

    def arbitrate(self, ready):
        by_id = {q.flow_id: q for q in ready}
        if not by_id:
            raise ConfigurationError('Arbitration needs at least one ready queue', code='arbiter')
        for flow_id in list(self.deficit):
            if flow_id not in by_id:
                self.deficit[flow_id] = 0
        for flow_id in by_id:
            self.deficit.setdefault(flow_id, 0)

        current = self.current
        if current in by_id and self.deficit[current] >= self.cost(by_id[current]):
            self.deficit[current] -= self.cost(by_id[current])
            return current

        ids = sorted(by_id)
        start = 0
        if current is not None:
            start = next((i for i, f in enumerate(ids) if f > current), 0)
        order = ids[start:] + ids[:start]
        while True:
            for flow_id in order:
                self.deficit[flow_id] += self._quantum(flow_id)
                cost = self.cost(by_id[flow_id])
                if self.deficit[flow_id] >= cost:
                    self.deficit[flow_id] -= cost
                    self.current = flow_id
                    return flow_id


class PriorityArbiter:
    """Highest level wins; round robin among flows sharing that level"""

    def __init__(self, levels):
        self.levels = dict(levels)
        self._rr = {}

    def arbitrate(self, ready):
        if not ready:
            raise ConfigurationError('Arbitration needs at least one ready queue', code='arbiter')
        top = max(self.levels.get(q.flow_id, 0) for q in ready)
        candidates = [q for q in ready if self.levels.get(q.flow_id, 0) == top]
        return self._rr.setdefault(top, RoundRobinArbiter()).arbitrate(candidates)


def make_arbiter(policy):
    if policy.kind == 'rr':
        return RoundRobinArbiter()
    if policy.kind == 'wrr':
        return DeficitRoundRobinArbiter(policy.weights)
    if policy.kind == 'priority':
        return PriorityArbiter(policy.levels)
    if policy.kind == 'wfq':
        return DeficitRoundRobinArbiter(policy.weights, quantum=WFQ_QUANTUM_BYTES, cost=head_cost_bytes)
    raise ConfigurationError(f'Unknown arbiter policy {policy.kind!r}')


def arbitrate(arbiter, ready):
    """Grant one of the ready queues under the arbiter's policy"""
    return arbiter.arbitrate(list(ready))


@dataclass
class Transfer:
    flow_id: int
    direction: Direction
    size: int
    on_done: object = field(repr=False, default=None)
    remaining: int = 0
    requested_at: int = 0

    def __post_init__(self):
        self.remaining = self.size


class Link:
    """
    One interconnect direction serving tlp granules round robin across the
    flows holding an active transfer. Occupancy is tracked as an exact
    rational; events fire at the ceiling cycle.
    """

    def __init__(self, direction, gbps, tlp_bytes, overhead_bytes, cycle_ns):
        self.direction = direction
        self.gbps = gbps
        self.tlp_bytes = tlp_bytes
        self.overhead_bytes = overhead_bytes
        self.cycle_ns = cycle_ns
        self.ring = deque()
        self.free_at = Fraction(0)
        self.busy = False
        self.delivered_bytes = 0
        self.busy_cycles = Fraction(0)
        self._granule_cycles = {}

    def granule_cycles(self, granule):
        cycles = self._granule_cycles.get(granule)
        if cycles is None:
            cycles = bytes_to_cycles(granule + self.overhead_bytes, self.gbps, self.cycle_ns)
            self._granule_cycles[granule] = cycles
        return cycles


class Interconnect:
    """
    Full-duplex channel plus a peer link, sharing one credit pool

    A flow has at most one active transfer per direction; further requests
    wait behind it in FIFO order. An active transfer holds one credit until its
    last granule lands.
    """

    def __init__(self, sim, channel):
        self.sim = sim
        self.channel = channel
        cycle_ns = sim.clock.cycle_ns
        self.links = {
            direction: Link(direction, channel.bandwidth(direction), channel.tlp_bytes,
                            channel.tlp_overhead_bytes, cycle_ns)
            for direction in Direction
        }
        self.credits_free = channel.credits
        self.credit_waiters = deque()
        self.max_in_flight = 0
        self._active = {}
        self._backlog = {}

    @property
    def in_flight(self):
        return self.channel.credits - self.credits_free

    def request_transfer(self, flow_id, direction, num_bytes, on_done):
        """
        Queue a DMA transfer; on_done() runs at the cycle its last granule lands

        Returns:
            Transfer
        """
        if num_bytes <= 0:
            raise ConfigurationError('Transfer size must be positive', code='size')
        transfer = Transfer(flow_id, direction, num_bytes, on_done, requested_at=self.sim.now)
        key = (flow_id, direction)
        if key in self._active:
            self._backlog.setdefault(key, deque()).append(transfer)
        else:
            self._activate(transfer)
        return transfer

    def busy(self, flow_id, direction):
        return (flow_id, direction) in self._active

    def _activate(self, transfer):
        self._active[(transfer.flow_id, transfer.direction)] = transfer
        if self.credits_free > 0:
            self._grant(transfer)
        else:
            self.credit_waiters.append(transfer)

    def _grant(self, transfer):
        self.credits_free -= 1
        self.max_in_flight = max(self.max_in_flight, self.in_flight)
        link = self.links[transfer.direction]
        link.ring.append(transfer)
        if not link.busy:
            self._start_granule(link, max(link.free_at, Fraction(self.sim.now)))

    def _start_granule(self, link, start):
        transfer = link.ring.popleft()
        granule = min(link.tlp_bytes, transfer.remaining)
        duration = link.granule_cycles(granule)
        link.free_at = start + duration
        link.busy_cycles += duration
        link.busy = True
        self.sim.call_at(
            math.ceil(link.free_at), EventKind.FABRIC_GRANT, self._granule_done, link, transfer, granule,
        )

    def _granule_done(self, link, transfer, granule):
        link.delivered_bytes += granule
        transfer.remaining -= granule
        if transfer.remaining:
            link.ring.append(transfer)
        else:
            # transfers granted from here join the ring; the link is still busy
            self._finish(transfer)
        link.busy = False
        if link.ring:
            self._start_granule(link, link.free_at)

    def _finish(self, transfer):
        key = (transfer.flow_id, transfer.direction)
        del self._active[key]
        self.credits_free += 1
        if self.credit_waiters:
            self._grant(self.credit_waiters.popleft())
        backlog = self._backlog.get(key)
        if backlog:
            self._activate(backlog.popleft())
        if transfer.on_done:
            transfer.on_done()

    def utilization(self, direction, elapsed_cycles):
        if elapsed_cycles <= 0:
            return 0.0
        return float(min(Fraction(1), self.links[direction].busy_cycles / elapsed_cycles))

    def snapshot(self):
        """Busy cycles per direction; the control plane diffs successive snapshots"""
        return {direction: link.busy_cycles for direction, link in self.links.items()}


class AcceleratorPort:
    """
    Single server in front of one accelerator

    Per-flow device queues share a buffer of `buffer` slots. In push mode
    (unshaped baselines) a message arriving to a full queue or buffer is
    dropped. In reserve mode a slot is reserved before the fetch, so nothing
    is dropped inside the device. Output waits in a per-flow egress queue; a
    flow whose egress queue is full is not eligible for service.
    """

    def __init__(self, sim, model, port, arbiter, rng, on_output, on_slot_freed=None):
        self.sim = sim
        self.model = model
        self.port = port
        self.arbiter = arbiter
        self.rng = rng
        self.on_output = on_output
        self.on_slot_freed = on_slot_freed
        self.queues = {}
        self.egress = {}
        self.reserved = {}
        self.buffer_used = 0
        self.busy = False
        self.free_at = Fraction(0)
        self.served_bytes = 0
        self.busy_cycles = Fraction(0)
        self._work_cycles = {}

    def register_flow(self, flow_id):
        self.queues[flow_id] = FlowQueue(flow_id, self.port.flow_depth)
        self.egress[flow_id] = FlowQueue(flow_id, self.port.egress_depth)
        self.reserved[flow_id] = 0

    def drops(self, flow_id):
        return self.queues[flow_id].drops

    def can_reserve(self, flow_id):
        queue = self.queues[flow_id]
        return (queue.occupancy + self.reserved[flow_id] < queue.depth
                and self.buffer_used < self.port.buffer)

    def reserve(self, flow_id):
        self.reserved[flow_id] += 1
        self.buffer_used += 1

    def deliver(self, message):
        """Message fully transferred to the device; False means dropped"""
        queue = self.queues[message.flow_id]
        if message.reserved:
            self.reserved[message.flow_id] -= 1
            queue.push(message)
        elif self.buffer_used >= self.port.buffer:
            queue.drops += 1
            return False
        elif not queue.push(message):
            return False
        else:
            self.buffer_used += 1
        self.kick()
        return True

    def work_cycles(self, size):
        """Exact occupancy for size bytes at the curve throughput"""
        cycles = self._work_cycles.get(size)
        if cycles is None:
            cycles = bytes_to_cycles(size, self.model.curve_throughput(size), self.sim.clock.cycle_ns)
            self._work_cycles[size] = cycles
        return cycles

    def _eligible(self):
        return [q for fid, q in self.queues.items() if q.occupancy and not self.egress[fid].full]

    def kick(self, back_to_back=False):
        if self.busy or not self._eligible():
            return
        self.busy = True
        self.sim.call_at(self.sim.now, EventKind.ACCEL_START, self._start, back_to_back,
                         detail=self.model.acc_id)

    def _start(self, back_to_back):
        ready = self._eligible()
        if not ready:
            self.busy = False
            return
        flow_id = arbitrate(self.arbiter, ready)
        message = self.queues[flow_id].pop()
        self.buffer_used -= 1

        service = self.work_cycles(message.size)
        if not self.model.service_time_dist.is_zero:
            service = max(service, Fraction(self.model.service_time_dist.draw(self.rng)))
        # a continuously busy server keeps its fractional phase
        start = self.free_at if back_to_back else max(self.free_at, Fraction(self.sim.now))
        self.free_at = start + service
        self.busy_cycles += service
        self.sim.call_at(math.ceil(self.free_at), EventKind.ACCEL_DONE, self._done, message,
                         detail=f'flow={flow_id} bytes={message.size}')
        if self.on_slot_freed:
            self.on_slot_freed(flow_id)

    def _done(self, message):
        self.served_bytes += message.size
        message.egress_bytes = self.model.egress_size(message.size)
        self.on_output(message)
        self.busy = False
        self.kick(back_to_back=True)
