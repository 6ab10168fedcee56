"""
Tests for the event kernel
"""

import pytest

from acc_slo.engine import EventKind, SimClock, SimulationError, Simulator


def test_same_cycle_events_fire_in_insertion_order():
    sim = Simulator()
    fired = []
    for name in ('a', 'b', 'c'):
        sim.call_at(10, EventKind.INJECT, fired.append, name)
    sim.call_at(5, EventKind.INJECT, fired.append, 'early')
    sim.run_until(100)
    assert fired == ['early', 'a', 'b', 'c']


def test_handlers_see_the_event_cycle():
    sim = Simulator()
    seen = []
    sim.call_at(7, EventKind.CONTROL_TICK, lambda: seen.append(sim.now))
    sim.call_at(3, EventKind.CONTROL_TICK, lambda: sim.call_in(2, EventKind.INJECT, lambda: seen.append(sim.now)))
    sim.run_until(10)
    assert seen == [5, 7]


def test_scheduling_into_the_past_is_a_bug():
    sim = Simulator()
    sim.call_at(10, EventKind.INJECT, None)
    sim.run_until(10)
    with pytest.raises(SimulationError):
        sim.call_at(9, EventKind.INJECT, None)
    with pytest.raises(SimulationError):
        sim.run_until(5)


def test_run_until_leaves_later_events_pending():
    sim = Simulator()
    sim.call_at(10, EventKind.INJECT, None)
    sim.call_at(20, EventKind.INJECT, None)
    stats = sim.run_until(15)
    assert stats.events_dispatched == 1
    assert stats.events_pending == 1
    assert stats.end_cycle == 15


def test_trace_hash_identical_for_identical_runs():
    def run():
        sim = Simulator(seed=3, record_trace=True)
        for cycle in (4, 4, 9):
            sim.call_at(cycle, EventKind.ACCEL_DONE, None, detail=f'c={cycle}')
        return sim.run_until(10), sim.trace_lines

    (stats_a, lines_a), (stats_b, lines_b) = run(), run()
    assert stats_a.trace_hash == stats_b.trace_hash
    assert lines_a == lines_b
    assert lines_a[0] == '4 0 accel-done c=4'


def test_trace_hash_changes_with_event_order():
    a, b = Simulator(), Simulator()
    a.call_at(1, EventKind.INJECT, None)
    a.call_at(2, EventKind.ACCEL_DONE, None)
    b.call_at(1, EventKind.ACCEL_DONE, None)
    b.call_at(2, EventKind.INJECT, None)
    assert a.run_until(5).trace_hash != b.run_until(5).trace_hash


def test_random_streams_are_keyed_and_independent():
    first = Simulator(seed=7)
    second = Simulator(seed=7)
    # drawing from another stream never perturbs this one
    second.rng('arrivals', 2).random(100)
    assert list(first.rng('arrivals', 1).random(5)) == list(second.rng('arrivals', 1).random(5))
    assert list(first.rng('arrivals', 1).random(5)) != list(first.rng('arrivals', 2).random(5))
    assert list(Simulator(seed=8).rng('arrivals', 1).random(5)) != list(first.rng('arrivals', 1).random(5))


def test_clock_conversions():
    clock = SimClock(cycle_ns=4)
    assert clock.us_to_cycles(10) == 2500
    assert clock.ns_to_cycles(256) == 64
    with pytest.raises(SimulationError):
        SimClock(cycle_ns=0)
