"""Per-node protocol stacks for clustered and distributed dissemination, plus CBR converge-cast traffic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

from .mac_csma import BROADCAST, MacConfig, MacCounters, MacFrame, MacInterface
from .metrics import DataPacket, DropCause, MetricsCollector
from .mobility import COORDINATOR_SLOT, NODES_PER_BODY, GroupLayout, node_id
from .phy_channel import EnergyModel, PhyConfig
from .radio_medium import RadioMedium
from .routing_dymo import DataMessage, DymoRouter, RoutingConfig, RoutingCounters, RoutingMessage
from .sim_core import EventKind, Simulator, draw_uniform

logger = logging.getLogger(__name__)

INTER_CHANNEL = 0
ALLOWED_INTERVALS = (0.25, 0.5, 1.0)
MIN_PAYLOAD = 16
MAX_PAYLOAD = 1024


class Strategy(str, Enum):
    CLUSTERED = "Clustered"
    DISTRIBUTED = "Distributed"


class Role(str, Enum):
    SENSOR = "Sensor"
    COORDINATOR = "Coordinator"
    LEADER = "LeaderCoordinator"


class ChannelPlanError(ValueError):
    """Raised when a channel assignment breaks the strategy's isolation rules."""


@dataclass(frozen=True)
class NodeRole:
    role: Role
    body_id: int
    node_slot: int

    @property
    def node_id(self) -> int:
        return node_id(self.body_id, self.node_slot)


def assign_roles(bodies: int, leader_body: int = 0, coordinator_slot: int = COORDINATOR_SLOT) -> List[NodeRole]:
    if not 0 <= leader_body < bodies:
        raise ValueError(f"leader body {leader_body} outside 0..{bodies - 1}")
    if not 0 <= coordinator_slot < NODES_PER_BODY:
        raise ValueError(f"coordinator slot {coordinator_slot} outside 0..{NODES_PER_BODY - 1}")
    roles = []
    for body in range(bodies):
        for slot in range(NODES_PER_BODY):
            if slot != coordinator_slot:
                role = Role.SENSOR
            elif body == leader_body:
                role = Role.LEADER
            else:
                role = Role.COORDINATOR
            roles.append(NodeRole(role=role, body_id=body, node_slot=slot))
    return roles


@dataclass(frozen=True)
class ChannelPlan:
    strategy: Strategy
    intra_channel: Dict[int, int] = field(default_factory=dict)
    inter_channel: int = INTER_CHANNEL
    distributed_channel: int = INTER_CHANNEL

    @classmethod
    def for_strategy(cls, strategy: Strategy, bodies: int) -> "ChannelPlan":
        strategy = Strategy(strategy)
        if strategy is Strategy.CLUSTERED:
            plan = cls(strategy=strategy, intra_channel={body: body + 1 for body in range(bodies)})
        else:
            plan = cls(strategy=strategy)
        plan.validate(bodies)
        return plan

    def validate(self, bodies: int) -> None:
        if self.strategy is Strategy.DISTRIBUTED:
            return
        missing = [body for body in range(bodies) if body not in self.intra_channel]
        if missing:
            raise ChannelPlanError(f"bodies {missing} have no intra-body channel")
        channels = list(self.intra_channel.values())
        if len(set(channels)) != len(channels):
            raise ChannelPlanError("intra-body channels must be pairwise distinct")
        if self.inter_channel in channels:
            raise ChannelPlanError(f"inter-body channel {self.inter_channel} reused inside a body")

    @property
    def channel_count(self) -> int:
        if self.strategy is Strategy.DISTRIBUTED:
            return 1
        return len(self.intra_channel) + 1


@dataclass(frozen=True)
class TrafficConfig:
    payload_bytes: int = 16
    interval_s: float = 1.0
    coordinators_generate: bool = True

    def __post_init__(self) -> None:
        if not MIN_PAYLOAD <= self.payload_bytes <= MAX_PAYLOAD:
            raise ValueError(f"payload {self.payload_bytes} B outside [{MIN_PAYLOAD}, {MAX_PAYLOAD}]")
        if self.interval_s not in ALLOWED_INTERVALS:
            raise ValueError(f"interval {self.interval_s} s not one of {ALLOWED_INTERVALS}")


@dataclass(frozen=True)
class EnergyParams:
    voltage: float = 3.0
    i_tx_ma: float = 17.4
    i_rx_ma: float = 18.8
    i_idle_ma: float = 0.426
    initial_energy_j: float = 10.0

    def model(self) -> EnergyModel:
        return EnergyModel(voltage=self.voltage, i_tx=self.i_tx_ma, i_rx=self.i_rx_ma, i_idle=self.i_idle_ma)


@dataclass(frozen=True)
class StackConfig:
    mac: MacConfig = field(default_factory=MacConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    energy: EnergyParams = field(default_factory=EnergyParams)
    relay_queue_capacity: int = 50
    leader_body: int = 0
    coordinator_slot: int = COORDINATOR_SLOT
    # off-body antenna gains in dB, applied on body-to-body links only
    coordinator_gain_db: float = 4.0
    sensor_body_loss_db: float = 3.0


class _MacLink:
    """Routing transport over one MAC interface."""

    def __init__(self, iface: MacInterface) -> None:
        self.iface = iface

    def unicast(self, next_hop: int, message: RoutingMessage, size: int) -> None:
        self.iface.send(next_hop, message, size)

    def broadcast(self, message: RoutingMessage, size: int) -> None:
        self.iface.send(BROADCAST, message, size)


class NodeStack:
    """Interfaces, optional router and energy of one node; receives every MAC upcall."""

    def __init__(self, role: NodeRole, network: "Network") -> None:
        self.role = role
        self.node_id = role.node_id
        self.network = network
        self.ifaces: List[MacInterface] = []
        self.router: Optional[DymoRouter] = None
        self.router_iface: Optional[MacInterface] = None
        self.coordinator: Optional[int] = None

    def add_iface(self, channel_id: int, mac: MacConfig, antenna_gain_db: float = 0.0) -> MacInterface:
        index = len(self.ifaces)
        iface = MacInterface(
            sim=self.network.sim,
            medium=self.network.medium,
            node_id=self.node_id,
            port_id=self.node_id * 2 + index,
            channel_id=channel_id,
            phy=self.network.phy,
            config=mac,
            energy=self.network.stack.energy.model(),
            listener=self,
            antenna_gain_db=antenna_gain_db,
        )
        self.ifaces.append(iface)
        return iface

    def attach_router(self, iface: MacInterface, config: RoutingConfig) -> DymoRouter:
        self.router_iface = iface
        self.router = DymoRouter(
            sim=self.network.sim,
            node_id=self.node_id,
            link=_MacLink(iface),
            config=config,
            energy_fraction=self.remaining_fraction,
            deliver=self._deliver,
            drop=self._drop,
        )
        return self.router

    # --- energy -----------------------------------------------------------

    def energy_consumed(self, now: Optional[float] = None) -> float:
        now = self.network.sim.now if now is None else now
        return sum(iface.energy.consumed(now) for iface in self.ifaces)

    def remaining_fraction(self) -> float:
        budget = self.network.stack.energy.initial_energy_j
        return max(0.0, 1.0 - self.energy_consumed() / budget)

    # --- traffic ----------------------------------------------------------

    def generate(self, traffic: TrafficConfig) -> DataPacket:
        network = self.network
        packet = network.metrics.new_packet(self.node_id, network.leader, network.sim.now, traffic.payload_bytes)
        if self.router is not None:
            self.router.send_data(packet)
        else:
            self.ifaces[0].send(self.coordinator, DataMessage(packet), packet.payload_bytes)
        return packet

    def _deliver(self, packet: DataPacket) -> None:
        self.network.metrics.delivered(packet, self.network.sim.now)

    def _drop(self, packet: DataPacket, cause: DropCause) -> None:
        self.network.metrics.dropped(packet, cause)

    # --- MAC upcalls ------------------------------------------------------

    def mac_deliver(self, iface: MacInterface, frame: MacFrame) -> None:
        message = frame.payload
        if iface is self.router_iface and self.router is not None:
            self.router.receive(message, frame.src)
            return
        if self.role.role is Role.SENSOR or not isinstance(message, DataMessage):
            return
        # coordinator intra-body side: relay or consume
        packet = message.packet.hopped(self.node_id)
        if self.role.role is Role.LEADER:
            self._deliver(packet)
        elif self.router is not None:
            self.router.send_data(packet)

    def mac_tx_success(self, iface: MacInterface, frame: MacFrame) -> None:
        return None

    def mac_tx_failed(self, iface: MacInterface, frame: MacFrame) -> None:
        if iface is self.router_iface and self.router is not None:
            self.router.handle_link_failure(frame.dst, frame.payload)
        elif isinstance(frame.payload, DataMessage):
            self._drop(frame.payload.packet, DropCause.COORDINATOR_UNREACHABLE)

    def mac_drop(self, iface: MacInterface, frame: MacFrame) -> None:
        if isinstance(frame.payload, DataMessage):
            self._drop(frame.payload.packet, DropCause.MAC_QUEUE)


class Network:
    """Every node stack of one run, wired to a shared medium."""

    def __init__(
        self,
        sim: Simulator,
        medium: RadioMedium,
        strategy: Strategy,
        plan: ChannelPlan,
        phy: PhyConfig,
        stack: StackConfig,
        metrics: MetricsCollector,
    ) -> None:
        self.sim = sim
        self.medium = medium
        self.strategy = Strategy(strategy)
        self.plan = plan
        self.phy = phy
        self.stack = stack
        self.metrics = metrics
        self.leader = node_id(stack.leader_body, stack.coordinator_slot)
        self.stacks: Dict[int, NodeStack] = {}
        self.generated_by: Dict[int, int] = {}

    def __iter__(self) -> Iterator[NodeStack]:
        return iter(self.stacks[node] for node in sorted(self.stacks))

    @property
    def routers(self) -> List[DymoRouter]:
        return [stack.router for stack in self if stack.router is not None]

    def sources(self, traffic: TrafficConfig) -> List[NodeStack]:
        sources = []
        for stack in self:
            if stack.role.role is Role.LEADER:
                continue
            if stack.role.role is Role.COORDINATOR and not traffic.coordinators_generate:
                continue
            sources.append(stack)
        return sources

    def start(self, traffic: TrafficConfig, duration: float) -> None:
        """Arm hello beacons and CBR generators; sources stop after ``duration``."""
        for router in self.routers:
            router.start()
        for stack in self.sources(traffic):
            stream = self.sim.streams.get("app", stack.node_id)
            first = draw_uniform(stream, 0.0, traffic.interval_s)
            self._schedule_generate(stack, traffic, duration, first)

    def _schedule_generate(self, stack: NodeStack, traffic: TrafficConfig, duration: float, when: float) -> None:
        if when > duration:
            return

        def fire() -> None:
            stack.generate(traffic)
            self.generated_by[stack.node_id] = self.generated_by.get(stack.node_id, 0) + 1
            self._schedule_generate(stack, traffic, duration, when + traffic.interval_s)

        self.sim.schedule(when, f"n{stack.node_id}", EventKind.APP_GENERATE, fire)

    # --- reporting --------------------------------------------------------

    def mac_counters(self) -> MacCounters:
        total = MacCounters()
        for stack in self:
            for iface in stack.ifaces:
                total.merge(iface.counters)
        return total

    def routing_counters(self) -> RoutingCounters:
        total = RoutingCounters()
        for router in self.routers:
            total.merge(router.counters)
        return total

    def energy_by_role(self, now: Optional[float] = None) -> Dict[Role, List[float]]:
        result: Dict[Role, List[float]] = {role: [] for role in Role}
        for stack in self:
            result[stack.role.role].append(stack.energy_consumed(now))
        return result

    def route_rows(self) -> List[Tuple[float, int, int, int, int]]:
        rows: List[Tuple[float, int, int, int, int]] = []
        for router in self.routers:
            rows.extend(router.snapshot())
        return rows


def build_network(
    sim: Simulator,
    medium: RadioMedium,
    strategy: Strategy,
    layout: GroupLayout,
    phy: PhyConfig,
    stack: Optional[StackConfig] = None,
    metrics: Optional[MetricsCollector] = None,
    plan: Optional[ChannelPlan] = None,
) -> Network:
    """Create every node stack for ``strategy`` and attach it to ``medium``."""
    strategy = Strategy(strategy)
    stack = stack or StackConfig()
    bodies = layout.body_count
    if plan is None:
        plan = ChannelPlan.for_strategy(strategy, bodies)
    else:
        plan.validate(bodies)
    network = Network(sim, medium, strategy, plan, phy, stack, metrics or MetricsCollector())
    relay_mac = replace(stack.mac, queue_capacity=stack.relay_queue_capacity)

    for role in assign_roles(bodies, stack.leader_body, stack.coordinator_slot):
        node = NodeStack(role, network)
        network.stacks[node.node_id] = node
        if strategy is Strategy.DISTRIBUTED:
            gain = 0.0 if role.node_slot == stack.coordinator_slot else -stack.sensor_body_loss_db
            iface = node.add_iface(plan.distributed_channel, stack.mac, gain)
            node.attach_router(iface, stack.routing)
            continue
        node.add_iface(plan.intra_channel[role.body_id], stack.mac)
        if role.role is Role.SENSOR:
            node.coordinator = node_id(role.body_id, stack.coordinator_slot)
            continue
        inter = node.add_iface(plan.inter_channel, relay_mac, stack.coordinator_gain_db)
        node.attach_router(inter, stack.routing)

    logger.debug(
        "Built %s network: %d nodes, %d channels, %d routers",
        strategy.value,
        len(network.stacks),
        len(medium.channels_in_use),
        len(network.routers),
    )
    return network
