"""CSMA/CA MAC with immediate acknowledgement, binary backoff and duplicate filtering."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, Optional, Protocol

from .phy_channel import EnergyModel, PhyConfig, airtime, frame_bits
from .radio_medium import RadioMedium, Transmission
from .sim_core import Event, EventKind, Simulator

logger = logging.getLogger(__name__)

BROADCAST = -1
SEQ_MODULO = 256


class FrameType(str, Enum):
    DATA = "DATA"
    ACK = "ACK"


class ReceiveOutcome(str, Enum):
    DELIVER = "deliver"
    ACK = "ack"
    DISCARD = "discard"


@dataclass(frozen=True)
class MacFrame:
    """DATA or ACK frame; ``seq`` is per (sender, destination) modulo 256."""

    frame_type: FrameType
    src: int
    dst: int
    seq: int
    payload_len: int
    channel_id: int
    payload: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.frame_type is FrameType.ACK and self.payload_len != 0:
            raise ValueError("ACK frames carry no payload.")
        if not 0 <= self.seq < SEQ_MODULO:
            raise ValueError(f"MAC sequence number {self.seq} outside 0..{SEQ_MODULO - 1}.")

    @property
    def is_broadcast(self) -> bool:
        return self.dst == BROADCAST

    @property
    def total_bits(self) -> int:
        return frame_bits(self.payload_len)


@dataclass(frozen=True)
class MacConfig:
    """CSMA/CA timing, contention window bounds and buffer sizes."""

    cw_min: int = 16
    cw_max: int = 64
    slot_s: float = 145e-6
    sifs_s: float = 75e-6
    max_retries: int = 7
    queue_capacity: int = 50
    dedup_window: int = 16

    def __post_init__(self) -> None:
        if not 1 <= self.cw_min <= self.cw_max:
            raise ValueError("MAC contention window bounds must satisfy 1 <= cw_min <= cw_max.")
        if self.max_retries < 0 or self.queue_capacity < 1 or self.dedup_window < 1:
            raise ValueError("MAC retry limit, queue capacity and duplicate window must be positive.")

    def ack_timeout(self, phy: PhyConfig) -> float:
        return self.sifs_s + airtime(0, phy) + 2 * self.slot_s


@dataclass
class CsmaState:
    """Backoff counter, contention window and retry count for the frame at the queue head."""

    cw_min: int = 16
    cw_max: int = 64
    cw: int = 16
    backoff: int = 0
    retries: int = 0
    fail_count: int = 0

    def record_failure(self) -> None:
        """Count a failed attempt; the window doubles on every second consecutive failure."""
        self.fail_count += 1
        if self.fail_count % 2 == 0:
            self.cw = min(self.cw * 2, self.cw_max)
        self.retries += 1

    def reset(self) -> None:
        self.cw = self.cw_min
        self.backoff = 0
        self.retries = 0
        self.fail_count = 0


@dataclass
class MacCounters:
    tx_attempts: int = 0
    retransmissions: int = 0
    queue_drops: int = 0
    retry_drops: int = 0
    acks_sent: int = 0
    acks_received: int = 0
    acks_lost: int = 0
    delivered_up: int = 0
    duplicates: int = 0

    def merge(self, other: "MacCounters") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


class MacListener(Protocol):
    def mac_deliver(self, iface: "MacInterface", frame: MacFrame) -> None: ...

    def mac_tx_success(self, iface: "MacInterface", frame: MacFrame) -> None: ...

    def mac_tx_failed(self, iface: "MacInterface", frame: MacFrame) -> None: ...

    def mac_drop(self, iface: "MacInterface", frame: MacFrame) -> None: ...


class MacInterface:
    """One MAC/PHY interface of a node, tuned to a single logical channel."""

    def __init__(
        self,
        sim: Simulator,
        medium: RadioMedium,
        node_id: int,
        port_id: int,
        channel_id: int,
        phy: PhyConfig,
        config: MacConfig,
        energy: Optional[EnergyModel] = None,
        listener: Optional[MacListener] = None,
        antenna_gain_db: float = 0.0,
    ) -> None:
        self.sim = sim
        self.medium = medium
        self.node_id = node_id
        self.port_id = port_id
        self.channel_id = channel_id
        self.phy = phy
        self.config = config
        self.energy = energy or EnergyModel()
        self.listener = listener
        self.antenna_gain_db = antenna_gain_db
        self.state = CsmaState(cw_min=config.cw_min, cw_max=config.cw_max, cw=config.cw_min)
        self.counters = MacCounters()
        self.queue: Deque[MacFrame] = deque()
        self.transmitting = False
        self._serving = False
        self._awaiting_ack = False
        self._ack_pending = 0
        self._ack_timer: Optional[Event] = None
        self._rx_started: Optional[float] = None
        self._next_seq: Dict[int, int] = {}
        self._seen: Dict[int, Deque[int]] = {}
        self._stream = sim.streams.get("csma", port_id)
        self._target = f"n{node_id}.{port_id}"
        medium.attach(self)

    # --- upper-layer side -------------------------------------------------

    def send(self, dst: int, payload: Any, payload_len: int) -> bool:
        seq = self._next_seq.get(dst, 0)
        self._next_seq[dst] = (seq + 1) % SEQ_MODULO
        frame = MacFrame(
            frame_type=FrameType.DATA,
            src=self.node_id,
            dst=dst,
            seq=seq,
            payload_len=payload_len,
            channel_id=self.channel_id,
            payload=payload,
        )
        return self.enqueue(frame)

    def enqueue(self, frame: MacFrame) -> bool:
        if len(self.queue) >= self.config.queue_capacity:
            self.counters.queue_drops += 1
            logger.debug("MAC queue full on %s; dropping frame to %s", self._target, frame.dst)
            if self.listener is not None:
                self.listener.mac_drop(self, frame)
            return False
        self.queue.append(frame)
        if not self._serving:
            self._start_service()
        return True

    # --- contention -------------------------------------------------------

    def _draw_backoff(self) -> int:
        return int(self._stream.integers(1, self.state.cw + 1))

    def _start_service(self) -> None:
        if not self.queue:
            self._serving = False
            return
        self._serving = True
        self.state.backoff = self._draw_backoff()
        self._schedule_slot()

    def _schedule_slot(self) -> None:
        self.sim.schedule_in(self.config.slot_s, self._target, EventKind.TIMER, self._on_slot)

    def cca(self) -> bool:
        """True when the channel is busy at this interface."""
        return self.transmitting or self._ack_pending > 0 or self.medium.is_busy(self)

    def _on_slot(self) -> None:
        if self.cca():
            self._schedule_slot()
            return
        self.state.backoff -= 1
        if self.state.backoff <= 0:
            self.state.backoff = 0
            self.sim.schedule(self.sim.now, self._target, EventKind.FRAME_START, self._transmit_head)
            return
        self._schedule_slot()

    def _transmit_head(self) -> None:
        if self.transmitting or not self.queue:
            self._schedule_slot()
            return
        frame = self.queue[0]
        self.counters.tx_attempts += 1
        if self.state.retries > 0:
            self.counters.retransmissions += 1
        self._start_tx(frame)

    def _start_tx(self, frame: MacFrame) -> None:
        self.transmitting = True
        self.medium.start_transmission(self, frame, airtime(frame.payload_len, self.phy))

    def on_tx_end(self, transmission: Transmission) -> None:
        self.transmitting = False
        self.energy.charge_tx(transmission.end - transmission.start)
        frame = transmission.frame
        if frame.frame_type is FrameType.ACK:
            return
        if frame.is_broadcast:
            self._complete_success()
            return
        self._awaiting_ack = True
        self._ack_timer = self.sim.schedule_in(
            self.config.ack_timeout(self.phy), self._target, EventKind.TIMER, self._on_ack_timeout
        )

    def _complete_success(self) -> None:
        frame = self.queue.popleft()
        self.state.reset()
        if self.listener is not None:
            self.listener.mac_tx_success(self, frame)
        self._start_service()

    def _on_ack_timeout(self) -> None:
        self._awaiting_ack = False
        self._ack_timer = None
        self.state.record_failure()
        if self.state.retries > self.config.max_retries:
            frame = self.queue.popleft()
            self.counters.retry_drops += 1
            self.state.reset()
            logger.debug("Retry limit reached on %s toward %s", self._target, frame.dst)
            if self.listener is not None:
                self.listener.mac_tx_failed(self, frame)
            self._start_service()
            return
        self.state.backoff = self._draw_backoff()
        self._schedule_slot()

    # --- reception --------------------------------------------------------

    def on_rx_start(self) -> None:
        self._rx_started = self.sim.now

    def _settle_rx(self) -> None:
        if self._rx_started is not None:
            self.energy.charge_rx(self.sim.now - self._rx_started)
            self._rx_started = None

    def on_rx_aborted(self) -> None:
        self._settle_rx()

    def on_rx_end(self, frame: MacFrame, success: bool) -> None:
        self._settle_rx()
        if success:
            self.on_receive(frame)

    def on_receive(self, frame: MacFrame) -> ReceiveOutcome:
        if frame.frame_type is FrameType.ACK:
            if (
                self._awaiting_ack
                and frame.dst == self.node_id
                and self.queue
                and self.queue[0].dst == frame.src
                and self.queue[0].seq == frame.seq
            ):
                self.counters.acks_received += 1
                self._awaiting_ack = False
                if self._ack_timer is not None:
                    self._ack_timer.cancel()
                    self._ack_timer = None
                self._complete_success()
            return ReceiveOutcome.DISCARD

        if frame.is_broadcast:
            self._deliver(frame)
            return ReceiveOutcome.DELIVER
        if frame.dst != self.node_id:
            return ReceiveOutcome.DISCARD

        self._schedule_ack(frame)
        seen = self._seen.setdefault(frame.src, deque(maxlen=self.config.dedup_window))
        if frame.seq in seen:
            self.counters.duplicates += 1
            return ReceiveOutcome.ACK
        seen.append(frame.seq)
        self._deliver(frame)
        return ReceiveOutcome.DELIVER

    def _deliver(self, frame: MacFrame) -> None:
        self.counters.delivered_up += 1
        if self.listener is not None:
            self.listener.mac_deliver(self, frame)

    def _schedule_ack(self, frame: MacFrame) -> None:
        ack = MacFrame(
            frame_type=FrameType.ACK,
            src=self.node_id,
            dst=frame.src,
            seq=frame.seq,
            payload_len=0,
            channel_id=self.channel_id,
        )
        self._ack_pending += 1
        self.sim.schedule_in(self.config.sifs_s, self._target, EventKind.FRAME_START, lambda: self._send_ack(ack))

    def _send_ack(self, ack: MacFrame) -> None:
        self._ack_pending -= 1
        if self.transmitting:
            self.counters.acks_lost += 1
            return
        self.counters.acks_sent += 1
        self._start_tx(ack)

    @property
    def queue_length(self) -> int:
        return len(self.queue)
