"""Reactive DYMO/AODVv2 routing with path accumulation, targeted RERR and hello-based neighbor upkeep."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Protocol, Tuple, Union

from .metrics import DataPacket, DropCause
from .sim_core import Event, EventKind, Simulator, draw_uniform

logger = logging.getLogger(__name__)

SEQ_SPACE = 1 << 16
NODE_ADDRESS_BYTES = 6


def seq_newer(a: int, b: int) -> bool:
    """True when 16-bit sequence number ``a`` is fresher than ``b``."""
    delta = (a - b) % SEQ_SPACE
    return 0 < delta < SEQ_SPACE // 2


@dataclass(frozen=True)
class RoutingConfig:
    hello_interval: float = 3.0
    neighbor_timeout: float = 9.0
    route_lifetime: float = 10.0
    discovery_timeout: float = 2.0
    discovery_attempts: int = 3
    buffer_per_dest: int = 10
    energy_threshold: float = 0.05
    hello_bytes: int = 4

    def __post_init__(self) -> None:
        if self.hello_interval <= 0 or self.neighbor_timeout <= 0:
            raise ValueError("hello interval and neighbor timeout must be positive")
        if self.route_lifetime <= 0 or self.discovery_timeout <= 0:
            raise ValueError("route lifetime and discovery timeout must be positive")
        if self.discovery_attempts < 1 or self.buffer_per_dest < 1:
            raise ValueError("discovery attempts and buffer size must be at least 1")
        if not 0.0 <= self.energy_threshold <= 1.0:
            raise ValueError("energy threshold is a fraction in [0, 1]")

    @property
    def memory_horizon(self) -> float:
        """Seconds a seen RREQ or an originated packet id is remembered."""
        return self.route_lifetime + self.discovery_timeout * self.discovery_attempts


@dataclass
class RouteTableEntry:
    dest: int
    next_hop: int
    seq_no: int
    hop_count: int
    expiry: float
    valid: bool = True
    # upstream node -> last time it sent data through this entry
    precursors: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.hop_count < 1:
            raise ValueError("hop_count must be at least 1")

    def usable(self, now: float) -> bool:
        return self.valid and now < self.expiry


@dataclass(frozen=True)
class Rreq:
    orig: int
    target: int
    orig_seq: int
    accumulated_path: Tuple[int, ...]
    path_seqs: Tuple[int, ...]
    hop_count: int = 0

    def __post_init__(self) -> None:
        if not self.accumulated_path or self.accumulated_path[0] != self.orig:
            raise ValueError("accumulated path must start with the originator")
        if len(set(self.accumulated_path)) != len(self.accumulated_path):
            raise ValueError("accumulated path contains a repeated node")
        if len(self.accumulated_path) != self.hop_count + 1 or len(self.path_seqs) != len(self.accumulated_path):
            raise ValueError("accumulated path length must equal hop_count + 1")

    def extended(self, node: int, seq: int) -> "Rreq":
        return Rreq(
            orig=self.orig,
            target=self.target,
            orig_seq=self.orig_seq,
            accumulated_path=self.accumulated_path + (node,),
            path_seqs=self.path_seqs + (seq,),
            hop_count=self.hop_count + 1,
        )


@dataclass(frozen=True)
class Rrep:
    orig: int
    target: int
    target_seq: int
    path: Tuple[int, ...]
    path_seqs: Tuple[int, ...]


@dataclass(frozen=True)
class Rerr:
    unreachable: Tuple[int, ...]
    origin: int


@dataclass(frozen=True)
class Hello:
    origin: int


@dataclass(frozen=True)
class DataMessage:
    packet: DataPacket


RoutingMessage = Union[Rreq, Rrep, Rerr, Hello, DataMessage]


def message_size(message: RoutingMessage, hello_bytes: int = 4) -> int:
    """Payload bytes handed to the MAC for a routing message."""
    if isinstance(message, Rreq):
        return 8 + NODE_ADDRESS_BYTES * len(message.accumulated_path)
    if isinstance(message, Rrep):
        return 8 + NODE_ADDRESS_BYTES * (len(message.path) + 1)
    if isinstance(message, Rerr):
        return 4 + NODE_ADDRESS_BYTES * len(message.unreachable)
    if isinstance(message, Hello):
        return hello_bytes
    return message.packet.payload_bytes


class SendResult(str, Enum):
    ROUTED = "routed"
    DISCOVERY_STARTED = "discovery-started"
    QUEUED = "queued"


class RreqOutcome(str, Enum):
    FORWARD = "forward"
    REPLY = "reply"
    DROP = "drop"


class RrepOutcome(str, Enum):
    FORWARD = "forward"
    CONSUME = "consume"


class RoutingLink(Protocol):
    """Transport the router sends through; failures come back via ``handle_link_failure``."""

    def unicast(self, next_hop: int, message: RoutingMessage, size: int) -> None: ...

    def broadcast(self, message: RoutingMessage, size: int) -> None: ...


@dataclass
class RoutingCounters:
    rreq_sent: int = 0
    rreq_received: int = 0
    rreq_forwarded: int = 0
    rreq_duplicates: int = 0
    rreq_gated: int = 0
    rrep_sent: int = 0
    rrep_received: int = 0
    rerr_sent: int = 0
    rerr_received: int = 0
    hello_sent: int = 0
    discoveries_started: int = 0
    discoveries_failed: int = 0
    link_failures: int = 0
    data_forwarded: int = 0

    def merge(self, other: "RoutingCounters") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class _Discovery:
    attempts: int = 0
    timer: Optional[Event] = None


class DymoRouter:
    """Routing state machine of one node.

    The router is transport-agnostic: it hands messages to a ``RoutingLink`` and
    is told about receptions through ``receive`` and about MAC give-ups through
    ``handle_link_failure``. Timers run on the shared simulator.
    """

    def __init__(
        self,
        sim: Simulator,
        node_id: int,
        link: RoutingLink,
        config: Optional[RoutingConfig] = None,
        energy_fraction: Optional[Callable[[], float]] = None,
        deliver: Optional[Callable[[DataPacket], None]] = None,
        drop: Optional[Callable[[DataPacket, DropCause], None]] = None,
    ) -> None:
        self.sim = sim
        self.node_id = node_id
        self.link = link
        self.config = config or RoutingConfig()
        self.energy_fraction = energy_fraction or (lambda: 1.0)
        self._deliver = deliver or (lambda packet: None)
        self._drop = drop or (lambda packet, cause: None)
        self.seq = 0
        self.routes: Dict[int, RouteTableEntry] = {}
        self.neighbors: Dict[int, float] = {}
        self.counters = RoutingCounters()
        self._seen_rreq: Dict[Tuple[int, int], float] = {}
        self._buffers: Dict[int, Deque[DataPacket]] = {}
        self._discoveries: Dict[int, _Discovery] = {}
        self._originated: Dict[int, float] = {}
        self._neighbor_timers: Dict[int, Event] = {}
        self._target = f"r{node_id}"

    # --- route table ------------------------------------------------------

    def lookup(self, dest: int) -> Optional[RouteTableEntry]:
        entry = self.routes.get(dest)
        if entry is None or not entry.usable(self.sim.now):
            return None
        return entry

    def install_route(self, dest: int, next_hop: int, hop_count: int, seq_no: int) -> bool:
        """Install or refresh a route; keeps the fresher, then shorter, candidate."""
        if dest == self.node_id:
            return False
        now = self.sim.now
        current = self.routes.get(dest)
        if current is not None and current.usable(now):
            fresher = seq_newer(seq_no, current.seq_no)
            same = seq_no == current.seq_no
            if not fresher and not (same and hop_count < current.hop_count):
                if same and hop_count == current.hop_count and next_hop == current.next_hop:
                    current.expiry = now + self.config.route_lifetime
                return False
        precursors = current.precursors if current is not None and current.next_hop == next_hop else {}
        self.routes[dest] = RouteTableEntry(
            dest=dest,
            next_hop=next_hop,
            seq_no=seq_no,
            hop_count=hop_count,
            expiry=now + self.config.route_lifetime,
            precursors=precursors,
        )
        return True

    def snapshot(self) -> List[Tuple[float, int, int, int, int]]:
        """Rows ``(t, node, dest, next_hop, hops)`` for every usable entry."""
        now = self.sim.now
        return [
            (now, self.node_id, entry.dest, entry.next_hop, entry.hop_count)
            for dest, entry in sorted(self.routes.items())
            if entry.usable(now)
        ]

    # --- data plane -------------------------------------------------------

    def send_data(self, packet: DataPacket) -> SendResult:
        if packet.dest == self.node_id:
            raise ValueError(f"node {self.node_id} cannot route a packet to itself")
        self._forget_stale()
        self._originated[packet.id] = self.sim.now
        if self.lookup(packet.dest) is not None:
            self._forward(packet, upstream=None)
            return SendResult.ROUTED
        self._buffer(packet)
        if packet.dest in self._discoveries:
            return SendResult.QUEUED
        self._start_discovery(packet.dest)
        return SendResult.DISCOVERY_STARTED

    def _buffer(self, packet: DataPacket) -> None:
        buffer = self._buffers.setdefault(packet.dest, deque())
        if len(buffer) >= self.config.buffer_per_dest:
            oldest = buffer.popleft()
            self._originated.pop(oldest.id, None)
            self._drop(oldest, DropCause.DISCOVERY_BUFFER)
        buffer.append(packet)

    def _forget_stale(self) -> None:
        # both maps are in insertion order, which is also time order
        horizon = self.sim.now - self.config.memory_horizon
        for memory in (self._seen_rreq, self._originated):
            while memory:
                key = next(iter(memory))
                if memory[key] >= horizon:
                    break
                del memory[key]

    def _forward(self, packet: DataPacket, upstream: Optional[int]) -> None:
        entry = self.routes[packet.dest]
        entry.expiry = self.sim.now + self.config.route_lifetime
        if upstream is not None:
            entry.precursors[upstream] = self.sim.now
        self.counters.data_forwarded += 1
        message = DataMessage(packet)
        self.link.unicast(entry.next_hop, message, message_size(message))

    def handle_data(self, packet: DataPacket, from_node: int) -> None:
        packet = packet.hopped(self.node_id)
        if packet.dest == self.node_id:
            self._deliver(packet)
            return
        if self.lookup(packet.dest) is None:
            self._drop(packet, DropCause.NO_ROUTE)
            self._send_rerr(from_node, (packet.dest,))
            return
        self._forward(packet, upstream=from_node)

    # --- discovery --------------------------------------------------------

    def _next_seq(self) -> int:
        self.seq = (self.seq + 1) % SEQ_SPACE
        return self.seq

    def _start_discovery(self, dest: int) -> None:
        self.counters.discoveries_started += 1
        self._discoveries[dest] = _Discovery()
        logger.debug("Node %s starts route discovery toward %s", self.node_id, dest)
        self._discovery_attempt(dest)

    def _discovery_attempt(self, dest: int) -> None:
        discovery = self._discoveries[dest]
        discovery.attempts += 1
        seq = self._next_seq()
        rreq = Rreq(
            orig=self.node_id,
            target=dest,
            orig_seq=seq,
            accumulated_path=(self.node_id,),
            path_seqs=(seq,),
        )
        self._seen_rreq[(self.node_id, seq)] = self.sim.now
        self.counters.rreq_sent += 1
        self.link.broadcast(rreq, message_size(rreq))
        discovery.timer = self.sim.schedule_in(
            self.config.discovery_timeout,
            self._target,
            EventKind.TIMER,
            lambda: self._on_discovery_timeout(dest),
        )

    def _on_discovery_timeout(self, dest: int) -> None:
        discovery = self._discoveries.get(dest)
        if discovery is None:
            return
        discovery.timer = None
        if discovery.attempts < self.config.discovery_attempts:
            self._discovery_attempt(dest)
            return
        del self._discoveries[dest]
        self.counters.discoveries_failed += 1
        logger.debug("Node %s gave up discovering %s", self.node_id, dest)
        for packet in self._buffers.pop(dest, deque()):
            self._originated.pop(packet.id, None)
            self._drop(packet, DropCause.DISCOVERY_FAILED)

    def _finish_discovery(self, dest: int) -> None:
        discovery = self._discoveries.pop(dest, None)
        if discovery is not None and discovery.timer is not None:
            discovery.timer.cancel()
        for packet in self._buffers.pop(dest, deque()):
            self._forward(packet, upstream=None)

    def participates(self) -> bool:
        return self.energy_fraction() >= self.config.energy_threshold

    def handle_rreq(self, rreq: Rreq, from_node: int) -> RreqOutcome:
        self.counters.rreq_received += 1
        self._forget_stale()
        key = (rreq.orig, rreq.orig_seq)
        if rreq.orig == self.node_id or self.node_id in rreq.accumulated_path or key in self._seen_rreq:
            self.counters.rreq_duplicates += 1
            return RreqOutcome.DROP
        self._seen_rreq[key] = self.sim.now

        path = rreq.accumulated_path
        for index, node in enumerate(path):
            self.install_route(node, from_node, len(path) - index, rreq.path_seqs[index])

        if rreq.target == self.node_id:
            rrep = Rrep(
                orig=rreq.orig,
                target=self.node_id,
                target_seq=self._next_seq(),
                path=path,
                path_seqs=rreq.path_seqs,
            )
            self.counters.rrep_sent += 1
            self.link.unicast(from_node, rrep, message_size(rrep))
            return RreqOutcome.REPLY

        if not self.participates():
            self.counters.rreq_gated += 1
            return RreqOutcome.DROP
        forwarded = rreq.extended(self.node_id, self.seq)
        self.counters.rreq_forwarded += 1
        self.link.broadcast(forwarded, message_size(forwarded))
        return RreqOutcome.FORWARD

    def handle_rrep(self, rrep: Rrep, from_node: int) -> RrepOutcome:
        self.counters.rrep_received += 1
        path = rrep.path
        if self.node_id not in path:
            if from_node == rrep.target:
                self.install_route(rrep.target, from_node, 1, rrep.target_seq)
            return RrepOutcome.CONSUME
        index = path.index(self.node_id)
        self.install_route(rrep.target, from_node, len(path) - index, rrep.target_seq)
        for downstream in range(index + 1, len(path)):
            self.install_route(path[downstream], from_node, downstream - index, rrep.path_seqs[downstream])
        if index == 0:
            self._finish_discovery(rrep.target)
            return RrepOutcome.CONSUME
        self.counters.rrep_sent += 1
        self.link.unicast(path[index - 1], rrep, message_size(rrep))
        return RrepOutcome.FORWARD

    # --- errors -----------------------------------------------------------

    def _send_rerr(self, upstream: int, unreachable: Tuple[int, ...]) -> Rerr:
        rerr = Rerr(unreachable=unreachable, origin=self.node_id)
        self.counters.rerr_sent += 1
        self.link.unicast(upstream, rerr, message_size(rerr))
        return rerr

    def _invalidate_via(self, next_hop: int, dests: Optional[Tuple[int, ...]] = None) -> Dict[int, List[int]]:
        """Invalidate entries through ``next_hop``; returns recent precursor -> lost dests."""
        now = self.sim.now
        notify: Dict[int, List[int]] = {}
        for dest, entry in sorted(self.routes.items()):
            if not entry.valid or entry.next_hop != next_hop:
                continue
            if dests is not None and dest not in dests:
                continue
            entry.valid = False
            for upstream, last_used in sorted(entry.precursors.items()):
                if upstream != next_hop and now - last_used <= self.config.route_lifetime:
                    notify.setdefault(upstream, []).append(dest)
            entry.precursors.clear()
        return notify

    def handle_link_failure(self, next_hop: int, failed: Optional[RoutingMessage] = None) -> List[Rerr]:
        self.counters.link_failures += 1
        logger.debug("Node %s lost link to %s", self.node_id, next_hop)
        self._forget_neighbor(next_hop)
        notify = self._invalidate_via(next_hop)
        sent = [self._send_rerr(upstream, tuple(dests)) for upstream, dests in notify.items()]
        if isinstance(failed, DataMessage):
            packet = failed.packet
            if packet.id in self._originated:
                self._originated.pop(packet.id, None)
                self._buffer(packet)
                if packet.dest not in self._discoveries:
                    self._start_discovery(packet.dest)
            else:
                self._drop(packet, DropCause.LINK_FAILURE)
        return sent

    def handle_rerr(self, rerr: Rerr, from_node: int) -> List[Rerr]:
        self.counters.rerr_received += 1
        notify = self._invalidate_via(from_node, rerr.unreachable)
        for dest in rerr.unreachable:
            entry = self.routes.get(dest)
            if entry is not None and not entry.valid:
                del self.routes[dest]
        sent = []
        for upstream, dests in notify.items():
            forwarded = Rerr(unreachable=tuple(dests), origin=rerr.origin)
            self.counters.rerr_sent += 1
            self.link.unicast(upstream, forwarded, message_size(forwarded))
            sent.append(forwarded)
        return sent

    # --- neighbors --------------------------------------------------------

    def start(self) -> None:
        """Arm hello beacons at a per-node random phase within the first interval."""
        phase = draw_uniform(self.sim.streams.get("hello", self.node_id), 0.0, self.config.hello_interval)
        self.sim.schedule_in(phase, self._target, EventKind.TIMER, self._on_hello)

    def _on_hello(self) -> None:
        hello = Hello(origin=self.node_id)
        self.counters.hello_sent += 1
        self.link.broadcast(hello, message_size(hello, self.config.hello_bytes))
        self.sim.schedule_in(self.config.hello_interval, self._target, EventKind.TIMER, self._on_hello)

    def note_heard(self, neighbor: int) -> None:
        self.neighbors[neighbor] = self.sim.now
        if neighbor not in self._neighbor_timers:
            self._arm_neighbor_timer(neighbor, self.sim.now + self.config.neighbor_timeout)

    def _arm_neighbor_timer(self, neighbor: int, when: float) -> None:
        self._neighbor_timers[neighbor] = self.sim.schedule(
            when, self._target, EventKind.TIMER, lambda: self._check_neighbor(neighbor)
        )

    def _check_neighbor(self, neighbor: int) -> None:
        self._neighbor_timers.pop(neighbor, None)
        last = self.neighbors.get(neighbor)
        if last is None:
            return
        deadline = last + self.config.neighbor_timeout
        if self.sim.now < deadline:
            self._arm_neighbor_timer(neighbor, deadline)
            return
        logger.debug("Node %s purges silent neighbor %s", self.node_id, neighbor)
        self.handle_link_failure(neighbor)

    def _forget_neighbor(self, neighbor: int) -> None:
        self.neighbors.pop(neighbor, None)
        timer = self._neighbor_timers.pop(neighbor, None)
        if timer is not None:
            timer.cancel()

    # --- dispatch ---------------------------------------------------------

    def receive(self, message: RoutingMessage, from_node: int) -> None:
        self.note_heard(from_node)
        if isinstance(message, DataMessage):
            self.handle_data(message.packet, from_node)
        elif isinstance(message, Rreq):
            self.handle_rreq(message, from_node)
        elif isinstance(message, Rrep):
            self.handle_rrep(message, from_node)
        elif isinstance(message, Rerr):
            self.handle_rerr(message, from_node)
        elif not isinstance(message, Hello):
            raise TypeError(f"unknown routing message {type(message).__name__}")

    @property
    def buffered(self) -> int:
        return sum(len(buffer) for buffer in self._buffers.values())
