from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import networkx as nx
import pytest

from services.dissemination import StackConfig, Strategy, build_network
from services.mac_csma import MacConfig, MacFrame, MacInterface
from services.metrics import DataPacket, DropCause, MetricsCollector
from services.mobility import GroupLayout, GroupMobility, MobilityParams, Posture, PostureSchedule
from services.phy_channel import ChannelModel, LinkKind, PhyConfig, default_channel_params
from services.radio_medium import RadioMedium
from services.routing_dymo import DymoRouter, RoutingConfig, RoutingMessage
from services.sim_core import EventKind, Simulator

STANDING_ONLY = PostureSchedule(steps=((Posture.STANDING, 1000.0),))


class IdealNetwork:
    """Routers over a static graph with a fixed per-hop delay and no losses."""

    def __init__(
        self,
        graph: nx.Graph,
        delay: float = 1e-3,
        config: Optional[RoutingConfig] = None,
        energy: Optional[Dict[int, float]] = None,
    ) -> None:
        self.sim = Simulator(seed=0)
        self.graph = graph
        self.delay = delay
        self.sent: List[Tuple[int, int, RoutingMessage]] = []
        self.received: List[Tuple[int, int, RoutingMessage]] = []
        self.delivered: List[DataPacket] = []
        self.dropped: List[Tuple[int, DropCause]] = []
        energy = energy or {}
        self.routers: Dict[int, DymoRouter] = {}
        for node in sorted(graph.nodes):
            fraction = energy.get(node, 1.0)
            self.routers[node] = DymoRouter(
                self.sim,
                node,
                _IdealLink(self, node),
                config=config,
                energy_fraction=lambda fraction=fraction: fraction,
                deliver=self.delivered.append,
                drop=lambda packet, cause: self.dropped.append((packet.id, cause)),
            )

    def unicast(self, src: int, dst: int, message: RoutingMessage) -> None:
        self.sent.append((src, dst, message))
        if self.graph.has_edge(src, dst):
            self.sim.schedule_in(self.delay, f"n{dst}", EventKind.FRAME_END, lambda: self._arrive(src, dst, message))
        else:
            self.sim.schedule_in(
                self.delay,
                f"n{src}",
                EventKind.TIMER,
                lambda: self.routers[src].handle_link_failure(dst, message),
            )

    def broadcast(self, src: int, message: RoutingMessage) -> None:
        self.sent.append((src, -1, message))
        for neighbor in sorted(self.graph.neighbors(src)):
            self.sim.schedule_in(
                self.delay,
                f"n{neighbor}",
                EventKind.FRAME_END,
                lambda neighbor=neighbor: self._arrive(src, neighbor, message),
            )

    def _arrive(self, src: int, dst: int, message: RoutingMessage) -> None:
        self.received.append((src, dst, message))
        self.routers[dst].receive(message, src)

    def packet(self, packet_id: int, source: int, dest: int) -> DataPacket:
        return DataPacket(id=packet_id, source=source, dest=dest, created_t=self.sim.now, payload_bytes=16)


class _IdealLink:
    def __init__(self, network: IdealNetwork, node: int) -> None:
        self.network = network
        self.node = node

    def unicast(self, next_hop: int, message: RoutingMessage, size: int) -> None:
        self.network.unicast(self.node, next_hop, message)

    def broadcast(self, message: RoutingMessage, size: int) -> None:
        self.network.broadcast(self.node, message)


@pytest.fixture
def ideal_network() -> Callable[..., IdealNetwork]:
    return IdealNetwork


class RecordingListener:
    def __init__(self) -> None:
        self.delivered: List[MacFrame] = []
        self.succeeded: List[MacFrame] = []
        self.failed: List[MacFrame] = []
        self.dropped: List[MacFrame] = []

    def mac_deliver(self, iface: MacInterface, frame: MacFrame) -> None:
        self.delivered.append(frame)

    def mac_tx_success(self, iface: MacInterface, frame: MacFrame) -> None:
        self.succeeded.append(frame)

    def mac_tx_failed(self, iface: MacInterface, frame: MacFrame) -> None:
        self.failed.append(frame)

    def mac_drop(self, iface: MacInterface, frame: MacFrame) -> None:
        self.dropped.append(frame)


class RadioBench:
    """Static bodies, no shadowing, every interface on channel 0."""

    def __init__(self, layout: GroupLayout, mac: Optional[MacConfig] = None) -> None:
        self.sim = Simulator(seed=3)
        self.phy = PhyConfig()
        self.mobility = GroupMobility(layout, MobilityParams(schedule=STANDING_ONLY), self.sim.streams)
        self.medium = RadioMedium(
            self.sim,
            ChannelModel(None),
            self.mobility,
            self.phy,
            default_channel_params(LinkKind.ON_BODY, 2450),
            default_channel_params(LinkKind.BODY_TO_BODY, 2450),
        )
        self.mac = mac or MacConfig()
        self.listeners: Dict[int, RecordingListener] = {}
        self.ifaces: Dict[int, MacInterface] = {}

    def add(self, node: int, mac: Optional[MacConfig] = None) -> MacInterface:
        listener = RecordingListener()
        iface = MacInterface(
            self.sim, self.medium, node, node * 2, 0, self.phy, mac or self.mac, listener=listener
        )
        self.listeners[node] = listener
        self.ifaces[node] = iface
        return iface


@pytest.fixture
def radio_bench() -> Callable[..., RadioBench]:
    return RadioBench


def make_network(
    strategy: Strategy,
    layout: GroupLayout,
    stack: Optional[StackConfig] = None,
    seed: int = 5,
):
    sim = Simulator(seed=seed)
    mobility = GroupMobility(layout, MobilityParams(schedule=STANDING_ONLY), sim.streams)
    medium = RadioMedium(
        sim,
        ChannelModel(None),
        mobility,
        PhyConfig(),
        default_channel_params(LinkKind.ON_BODY, 2450),
        default_channel_params(LinkKind.BODY_TO_BODY, 2450),
    )
    network = build_network(sim, medium, strategy, layout, PhyConfig(), stack, MetricsCollector())
    return sim, medium, network


@pytest.fixture
def network_factory():
    return make_network


TINY_SCENARIO = {
    "sim_duration_s": 2.0,
    "iterations": 2,
    "seed": 11,
    "topology": {"groups": 1, "members_per_group": 2},
    "output": {"topology_dot": True},
}


@pytest.fixture
def tiny_scenario_file(tmp_path: Path) -> Path:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(TINY_SCENARIO, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def repo_root() -> Path:
    return Path(__file__).resolve().parent.parent
