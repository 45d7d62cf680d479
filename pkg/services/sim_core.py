"""Deterministic discrete-event engine: clock, event queue and seeded random streams."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, TextIO, Tuple

import numpy as np
import simpy

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Raised for faults detected while a simulation run is executing."""


class SchedulingError(SimulationError):
    """Raised when an event is scheduled before the current clock."""


class EventKind(str, Enum):
    FRAME_START = "frame-start"
    FRAME_END = "frame-end"
    TIMER = "timer"
    APP_GENERATE = "app-generate"
    MOBILITY_STEP = "mobility-step"


@dataclass(order=True)
class Event:
    """Handle for a scheduled action; ``cancel`` keeps it from running."""

    time: float
    seq: int
    target: str = field(compare=False)
    kind: EventKind = field(compare=False)
    action: Optional[Callable[[], None]] = field(default=None, compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


StreamId = Tuple[str, int]


class RandomStreams:
    """Independent ``numpy`` generators keyed by ``(purpose tag, node id)``.

    Each stream is seeded from ``SeedSequence(seed, spawn_key=(crc32(tag), node))``
    so adding draws to one purpose never shifts the sequence of another.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._streams: Dict[StreamId, np.random.Generator] = {}

    def get(self, tag: str, node_id: int = 0) -> np.random.Generator:
        key = (tag, int(node_id))
        stream = self._streams.get(key)
        if stream is None:
            stream = make_stream(self.seed, tag, node_id)
            self._streams[key] = stream
        return stream


def make_stream(seed: int, tag: str, node_id: int = 0, *extra: int) -> np.random.Generator:
    """Build a fresh generator for ``(seed, tag, node_id, *extra)``."""
    spawn_key = (zlib.crc32(tag.encode("utf-8")), int(node_id), *(int(value) for value in extra))
    sequence = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(sequence))


def draw_uniform(stream: np.random.Generator, lo: float, hi: float) -> float:
    """Draw a value in ``[lo, hi)`` from ``stream``."""
    if lo > hi:
        raise ValueError(f"draw_uniform requires lo <= hi, got lo={lo}, hi={hi}")
    if lo == hi:
        return float(lo)
    return float(stream.uniform(lo, hi))


TICKS_PER_SECOND = 1_000_000_000


def to_ticks(seconds: float) -> int:
    """Integer nanosecond clock value for ``seconds``."""
    return int(round(float(seconds) * TICKS_PER_SECOND))


class Simulator:
    """Single-threaded event loop on top of :class:`simpy.Environment`.

    The environment clock counts integer nanoseconds, so events dequeue in
    ``(time, priority, eid)`` order with exact ties. Every action is a plain
    timeout callback; ``eid`` is issued at scheduling time, so equal-time
    events run in the order they were scheduled.

    Observer events (output snapshots) run in clock order like any other
    event but are left out of the event trace and its sequence numbering.
    """

    def __init__(self, seed: int = 0, trace: Optional[TextIO] = None) -> None:
        self.env = simpy.Environment()
        self.now = 0.0
        self.streams = RandomStreams(seed)
        self._live: Dict[int, Event] = {}
        self._next_seq = 0
        self._trace = trace
        self.processed = 0

    def schedule(
        self,
        time: float,
        target: str,
        kind: EventKind,
        action: Optional[Callable[[], None]] = None,
        observer: bool = False,
    ) -> Event:
        if time < self.now:
            raise SchedulingError(
                f"Cannot schedule {kind.value} for {target} at t={time!r}; clock is at t={self.now!r}."
            )
        ticks = max(to_ticks(time), self.env.now)
        seq = -1 if observer else self._next_seq
        if not observer:
            self._next_seq += 1
        event = Event(time=float(time), seq=seq, target=target, kind=kind, action=action)
        key = id(event)
        self._live[key] = event
        timeout = self.env.timeout(ticks - self.env.now)
        timeout.callbacks.append(lambda _: self._fire(key, observer))
        return event

    def schedule_in(
        self,
        delay: float,
        target: str,
        kind: EventKind,
        action: Optional[Callable[[], None]] = None,
        observer: bool = False,
    ) -> Event:
        if delay < 0:
            raise SchedulingError(f"Negative delay {delay!r} for {kind.value} on {target}.")
        return self.schedule(self.now + delay, target, kind, action, observer)

    def _fire(self, key: int, observer: bool) -> None:
        event = self._live.pop(key)
        if event.cancelled:
            return
        self.now = max(self.now, event.time)
        if self._trace is not None and not observer:
            self._trace.write(f"{event.time:.9f}\t{event.seq}\t{event.target}\t{event.kind.value}\n")
        if event.action is not None:
            event.action()
        if not observer:
            self.processed += 1

    def pending(self) -> int:
        return sum(1 for event in self._live.values() if not event.cancelled)

    def run_until(self, t_end: float) -> int:
        """Process every event with ``time <= t_end`` and park the clock at ``t_end``."""
        if t_end < 0:
            raise ValueError("t_end must be non-negative")
        limit = to_ticks(t_end)
        before = self.processed
        while self.env.peek() <= limit:
            self.env.step()
        if limit > self.env.now:
            self.env.run(until=limit)
        self.now = max(self.now, float(t_end))
        return self.processed - before
