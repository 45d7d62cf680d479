"""Channel occupancy ledger: who transmits on which logical channel and who hears it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Protocol

from .mobility import GroupMobility, split_node
from .phy_channel import (
    ChannelModel,
    ChannelParams,
    PhyConfig,
    ber,
    bit_snr,
    per,
    received_power_dbm,
    sinr_db,
)
from .sim_core import EventKind, Simulator

if TYPE_CHECKING:
    from .mac_csma import MacFrame

logger = logging.getLogger(__name__)


class RadioPort(Protocol):
    """What the medium needs from an attached interface."""

    node_id: int
    port_id: int
    channel_id: int
    transmitting: bool
    antenna_gain_db: float

    def on_rx_start(self) -> None: ...

    def on_rx_end(self, frame: "MacFrame", success: bool) -> None: ...

    def on_rx_aborted(self) -> None: ...

    def on_tx_end(self, transmission: "Transmission") -> None: ...


@dataclass(eq=False)
class Transmission:
    frame: "MacFrame"
    sender: RadioPort
    channel_id: int
    start: float
    end: float
    tx_power_dbm: float
    # received power at every other port on the channel, fixed at frame start
    rx_power: Dict[int, float] = field(default_factory=dict)


@dataclass(eq=False)
class Reception:
    transmission: Transmission
    prx_dbm: float
    min_sinr_db: float


@dataclass
class MediumCounters:
    frames_started: int = 0
    frames_locked: int = 0
    frames_received: int = 0
    frames_corrupted: int = 0
    receptions_aborted: int = 0


class RadioMedium:
    """Owns the in-flight transmissions of every channel and decides receptions.

    A port locks on the first frame it hears above the sensitivity while idle;
    later overlapping frames are interference only. Reception succeeds on a
    Bernoulli trial against the PER computed from the minimum SINR seen over
    the frame. Distinct channel ids never interact.
    """

    def __init__(
        self,
        sim: Simulator,
        channel: ChannelModel,
        mobility: GroupMobility,
        phy: PhyConfig,
        on_body: ChannelParams,
        body_to_body: ChannelParams,
        cca_threshold_dbm: float = -85.0,
        rx_sensitivity_dbm: float = -95.0,
    ) -> None:
        self.sim = sim
        self.channel = channel
        self.mobility = mobility
        self.phy = phy
        self.on_body = on_body
        self.body_to_body = body_to_body
        self.cca_threshold_dbm = cca_threshold_dbm
        self.rx_sensitivity_dbm = rx_sensitivity_dbm
        self.counters = MediumCounters()
        self._ports: Dict[int, List[RadioPort]] = {}
        self._active: Dict[int, List[Transmission]] = {}
        self._receptions: Dict[int, Reception] = {}
        self._observers: List[Callable[[Transmission], None]] = []
        # test hook: return True to force the loss of a frame at a port
        self.loss_filter: Optional[Callable[["MacFrame", RadioPort], bool]] = None

    def attach(self, port: RadioPort) -> None:
        self._ports.setdefault(port.channel_id, []).append(port)
        self._active.setdefault(port.channel_id, [])

    def add_observer(self, callback: Callable[[Transmission], None]) -> None:
        self._observers.append(callback)

    @property
    def channels_in_use(self) -> List[int]:
        return sorted(self._ports)

    def ports_on(self, channel_id: int) -> List[RadioPort]:
        return list(self._ports.get(channel_id, ()))

    def link_params(self, tx_node: int, rx_node: int) -> ChannelParams:
        if split_node(tx_node)[0] == split_node(rx_node)[0]:
            return self.on_body
        return self.body_to_body

    def rx_power(self, tx_node: int, rx_node: int, tx_power_dbm: float) -> float:
        now = self.sim.now
        params = self.link_params(tx_node, rx_node)
        distance = self.mobility.distance(tx_node, rx_node, now)
        loss = self.channel.pathloss_db(params, distance, now, (tx_node, rx_node))
        return received_power_dbm(tx_power_dbm, loss)

    def antenna_gains(self, tx_port: RadioPort, rx_port: RadioPort) -> float:
        """Off-body antenna gains of both ends in dB; on-body links carry none."""
        if split_node(tx_port.node_id)[0] == split_node(rx_port.node_id)[0]:
            return 0.0
        return tx_port.antenna_gain_db + rx_port.antenna_gain_db

    def is_busy(self, port: RadioPort) -> bool:
        """Energy-detect CCA at ``port``."""
        for transmission in self._active.get(port.channel_id, ()):
            if transmission.sender is port:
                return True
            if transmission.rx_power.get(port.port_id, float("-inf")) >= self.cca_threshold_dbm:
                return True
        return False

    def is_receiving(self, port: RadioPort) -> bool:
        return port.port_id in self._receptions

    def _sinr(self, reception: Reception, port: RadioPort, active: List[Transmission]) -> float:
        interferers = [
            transmission.rx_power[port.port_id]
            for transmission in active
            if transmission is not reception.transmission and port.port_id in transmission.rx_power
        ]
        params = self.link_params(reception.transmission.sender.node_id, port.node_id)
        return sinr_db(reception.prx_dbm, interferers, params.noise_dbm)

    def start_transmission(self, sender: RadioPort, frame: "MacFrame", duration: float) -> Transmission:
        now = self.sim.now
        channel_id = sender.channel_id
        transmission = Transmission(
            frame=frame,
            sender=sender,
            channel_id=channel_id,
            start=now,
            end=now + duration,
            tx_power_dbm=self.phy.tx_power_dbm,
        )
        self.counters.frames_started += 1

        own = self._receptions.pop(sender.port_id, None)
        if own is not None:
            self.counters.receptions_aborted += 1
            sender.on_rx_aborted()

        listeners = [port for port in self._ports.get(channel_id, ()) if port is not sender]
        for port in listeners:
            prx = self.rx_power(sender.node_id, port.node_id, transmission.tx_power_dbm)
            transmission.rx_power[port.port_id] = prx + self.antenna_gains(sender, port)

        active = self._active[channel_id]
        active.append(transmission)

        for port in listeners:
            reception = self._receptions.get(port.port_id)
            if reception is not None:
                reception.min_sinr_db = min(reception.min_sinr_db, self._sinr(reception, port, active))
                continue
            if port.transmitting:
                continue
            prx = transmission.rx_power[port.port_id]
            if prx < self.rx_sensitivity_dbm:
                continue
            reception = Reception(transmission=transmission, prx_dbm=prx, min_sinr_db=0.0)
            reception.min_sinr_db = self._sinr(reception, port, active)
            self._receptions[port.port_id] = reception
            self.counters.frames_locked += 1
            port.on_rx_start()

        for observer in self._observers:
            observer(transmission)

        self.sim.schedule(
            transmission.end,
            f"ch{channel_id}",
            EventKind.FRAME_END,
            lambda: self._finish(transmission),
        )
        return transmission

    def _finish(self, transmission: Transmission) -> None:
        channel_id = transmission.channel_id
        self._active[channel_id].remove(transmission)
        frame = transmission.frame
        bits = frame.total_bits
        for port in list(self._ports.get(channel_id, ())):
            reception = self._receptions.get(port.port_id)
            if reception is None or reception.transmission is not transmission:
                continue
            del self._receptions[port.port_id]
            params = self.link_params(transmission.sender.node_id, port.node_id)
            gamma = bit_snr(reception.min_sinr_db, params.bandwidth, self.phy.data_rate_bps)
            error_rate = per(ber(self.phy.modulation, gamma), bits)
            draw = float(self.sim.streams.get("phy-rx", port.port_id).random())
            success = draw >= error_rate
            if self.loss_filter is not None and self.loss_filter(frame, port):
                success = False
            if success:
                self.counters.frames_received += 1
            else:
                self.counters.frames_corrupted += 1
            port.on_rx_end(frame, success)
        transmission.sender.on_tx_end(transmission)

