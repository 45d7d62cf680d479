from __future__ import annotations

import io

import numpy as np
import pytest

from services.sim_core import (
    EventKind,
    RandomStreams,
    SchedulingError,
    Simulator,
    draw_uniform,
    make_stream,
)


def test_empty_queue_parks_clock_at_end():
    sim = Simulator()
    assert sim.run_until(10.0) == 0
    assert sim.now == 10.0


def test_run_until_stops_at_boundary_inclusive():
    sim = Simulator()
    fired = []
    for t in (1.0, 2.0, 3.0):
        sim.schedule(t, "x", EventKind.TIMER, lambda t=t: fired.append(t))
    assert sim.run_until(2.0) == 2
    assert fired == [1.0, 2.0]
    assert sim.now == 2.0
    sim.run_until(5.0)
    assert fired == [1.0, 2.0, 3.0]


def test_equal_times_run_in_scheduling_order():
    sim = Simulator()
    fired = []
    for label in "abc":
        sim.schedule(1.0, label, EventKind.TIMER, lambda label=label: fired.append(label))
    sim.run_until(1.0)
    assert fired == ["a", "b", "c"]


def test_events_scheduled_during_processing_respect_order():
    sim = Simulator()
    fired = []

    def first():
        fired.append(("first", sim.now))
        sim.schedule_in(0.0, "same-time", EventKind.TIMER, lambda: fired.append(("zero-delay", sim.now)))
        sim.schedule_in(0.5, "later", EventKind.TIMER, lambda: fired.append(("later", sim.now)))

    sim.schedule(1.0, "a", EventKind.TIMER, first)
    sim.schedule(1.0, "b", EventKind.TIMER, lambda: fired.append(("second", sim.now)))
    sim.run_until(2.0)
    assert fired == [("first", 1.0), ("second", 1.0), ("zero-delay", 1.0), ("later", 1.5)]


def test_scheduling_in_the_past_fails():
    sim = Simulator()
    sim.run_until(5.0)
    with pytest.raises(SchedulingError):
        sim.schedule(4.0, "late", EventKind.TIMER)
    with pytest.raises(SchedulingError):
        sim.schedule_in(-1.0, "late", EventKind.TIMER)


def test_cancelled_event_is_skipped():
    sim = Simulator()
    fired = []
    event = sim.schedule(1.0, "x", EventKind.TIMER, lambda: fired.append(1))
    event.cancel()
    assert sim.pending() == 0
    assert sim.run_until(2.0) == 0
    assert fired == []


def test_trace_lines_are_tab_separated():
    trace = io.StringIO()
    sim = Simulator(trace=trace)
    sim.schedule(0.5, "n3.6", EventKind.FRAME_START)
    sim.schedule(1.25, "r3", EventKind.TIMER)
    sim.run_until(2.0)
    assert trace.getvalue().splitlines() == [
        "0.500000000\t0\tn3.6\tframe-start",
        "1.250000000\t1\tr3\ttimer",
    ]


def test_draw_uniform_degenerate_interval():
    stream = make_stream(1, "test")
    assert draw_uniform(stream, 5.0, 5.0) == 5.0


def test_draw_uniform_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        draw_uniform(make_stream(1, "test"), 2.0, 1.0)


def test_draw_uniform_mean():
    stream = make_stream(7, "test")
    draws = np.array([draw_uniform(stream, 0.0, 1.0) for _ in range(100_000)])
    assert draws.min() >= 0.0
    assert draws.max() < 1.0
    assert abs(draws.mean() - 0.5) < 0.01


def test_streams_are_reproducible_and_independent():
    a = RandomStreams(42)
    b = RandomStreams(42)
    assert a.get("csma", 3).random() == b.get("csma", 3).random()

    # drawing from another purpose must not shift this one
    c = RandomStreams(42)
    c.get("phy-rx", 3).random(10)
    d = RandomStreams(42)
    assert c.get("csma", 3).random() == d.get("csma", 3).random()

    assert RandomStreams(42).get("csma", 3).random() != RandomStreams(42).get("csma", 4).random()
    assert RandomStreams(42).get("csma", 3).random() != RandomStreams(43).get("csma", 3).random()


def test_stream_lookup_returns_same_generator():
    streams = RandomStreams(1)
    assert streams.get("hello", 0) is streams.get("hello", 0)


def test_observer_events_stay_out_of_trace_and_numbering():
    plain = io.StringIO()
    sim = Simulator(trace=plain)
    sim.schedule(0.5, "n1.2", EventKind.FRAME_START)
    sim.schedule(1.0, "n1.2", EventKind.FRAME_END)
    sim.run_until(2.0)

    observed = io.StringIO()
    sim = Simulator(trace=observed)
    seen = []
    sim.schedule(0.25, "routes", EventKind.TIMER, lambda: seen.append(sim.now), observer=True)
    sim.schedule(0.5, "n1.2", EventKind.FRAME_START)
    sim.schedule(1.0, "n1.2", EventKind.FRAME_END)
    assert sim.run_until(2.0) == 2
    assert seen == [0.25]
    assert observed.getvalue() == plain.getvalue()


def test_clock_runs_on_simpy_environment():
    sim = Simulator()
    sim.schedule(0.000145, "x", EventKind.TIMER)
    sim.run_until(0.000145)
    assert sim.env.now == 145_000
    sim.run_until(3.0)
    assert sim.env.now == 3_000_000_000
    assert sim.now == 3.0


def test_neighbouring_float_times_keep_scheduling_order():
    sim = Simulator()
    fired = []
    sim.schedule(0.1 + 0.2, "a", EventKind.TIMER, lambda: fired.append("a"))
    sim.schedule(0.3, "b", EventKind.TIMER, lambda: fired.append("b"))
    sim.run_until(0.3)
    assert fired == ["a", "b"]
