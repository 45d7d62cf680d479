from __future__ import annotations

import pytest

from services.dissemination import (
    ChannelPlan,
    ChannelPlanError,
    Role,
    Strategy,
    TrafficConfig,
    assign_roles,
)
from services.mac_csma import BROADCAST, FrameType
from services.mobility import COORDINATOR_SLOT, GroupLayout, split_node

ONE_BODY = GroupLayout(groups=1, members_per_group=1)
TWO_BODIES = GroupLayout(groups=1, members_per_group=2)


def test_roles_of_default_population():
    roles = assign_roles(12)
    assert len(roles) == 60
    assert sum(role.role is Role.SENSOR for role in roles) == 48
    assert sum(role.role is Role.COORDINATOR for role in roles) == 11
    leaders = [role for role in roles if role.role is Role.LEADER]
    assert [(leader.body_id, leader.node_slot, leader.node_id) for leader in leaders] == [(0, 0, 0)]


def test_roles_reject_bad_leader():
    with pytest.raises(ValueError):
        assign_roles(3, leader_body=3)
    with pytest.raises(ValueError):
        assign_roles(3, coordinator_slot=5)


def test_clustered_plan_uses_distinct_channels():
    plan = ChannelPlan.for_strategy(Strategy.CLUSTERED, 12)
    assert plan.channel_count == 13
    assert sorted(plan.intra_channel.values()) == list(range(1, 13))
    assert plan.inter_channel == 0


def test_distributed_plan_uses_one_channel():
    assert ChannelPlan.for_strategy(Strategy.DISTRIBUTED, 12).channel_count == 1


def test_clustered_plan_validation():
    with pytest.raises(ChannelPlanError):
        ChannelPlan(Strategy.CLUSTERED, intra_channel={0: 1, 1: 1}).validate(2)
    with pytest.raises(ChannelPlanError):
        ChannelPlan(Strategy.CLUSTERED, intra_channel={0: 1, 1: 0}).validate(2)
    with pytest.raises(ChannelPlanError):
        ChannelPlan(Strategy.CLUSTERED, intra_channel={0: 1}).validate(2)


def test_traffic_config_validation():
    TrafficConfig(payload_bytes=1024, interval_s=0.25)
    with pytest.raises(ValueError):
        TrafficConfig(payload_bytes=8)
    with pytest.raises(ValueError):
        TrafficConfig(payload_bytes=2048)
    with pytest.raises(ValueError):
        TrafficConfig(interval_s=0.3)


def test_clustered_network_wiring(network_factory):
    _, medium, network = network_factory(Strategy.CLUSTERED, GroupLayout())
    assert len(network.stacks) == 60
    assert medium.channels_in_use == list(range(13))
    assert len(network.routers) == 12
    for stack in network:
        if stack.role.role is Role.SENSOR:
            assert stack.router is None
            assert len(stack.ifaces) == 1
            assert split_node(stack.coordinator) == (stack.role.body_id, 0)
            assert stack.ifaces[0].channel_id == stack.role.body_id + 1
        else:
            assert [iface.channel_id for iface in stack.ifaces] == [stack.role.body_id + 1, 0]
            assert stack.router_iface is stack.ifaces[1]


def test_distributed_network_wiring(network_factory):
    _, medium, network = network_factory(Strategy.DISTRIBUTED, GroupLayout())
    assert medium.channels_in_use == [0]
    assert len(network.routers) == 60
    assert all(len(stack.ifaces) == 1 for stack in network)


def test_sources_exclude_the_leader(network_factory):
    _, _, network = network_factory(Strategy.CLUSTERED, GroupLayout())
    sources = network.sources(TrafficConfig())
    assert len(sources) == 59
    assert network.leader not in {stack.node_id for stack in sources}
    sensors_only = network.sources(TrafficConfig(coordinators_generate=False))
    assert len(sensors_only) == 48


def test_off_body_antenna_gains_follow_the_role(network_factory):
    _, _, clustered = network_factory(Strategy.CLUSTERED, TWO_BODIES)
    for stack in clustered:
        if stack.role.role is Role.SENSOR:
            assert [iface.antenna_gain_db for iface in stack.ifaces] == [0.0]
        else:
            assert [iface.antenna_gain_db for iface in stack.ifaces] == [0.0, 4.0]

    _, _, distributed = network_factory(Strategy.DISTRIBUTED, TWO_BODIES)
    gains = {stack.node_id: stack.ifaces[0].antenna_gain_db for stack in distributed}
    assert gains[0] == 0.0 and gains[5] == 0.0
    assert all(gain == -3.0 for node, gain in gains.items() if split_node(node)[1] != COORDINATOR_SLOT)


def test_coordinator_links_reach_further_than_sensor_links(network_factory):
    _, medium, network = network_factory(Strategy.DISTRIBUTED, TWO_BODIES)
    wrist, other_wrist = network.stacks[3].ifaces[0], network.stacks[8].ifaces[0]
    stomach, other_stomach = network.stacks[0].ifaces[0], network.stacks[5].ifaces[0]
    assert medium.antenna_gains(wrist, other_wrist) == -6.0
    assert medium.antenna_gains(stomach, other_stomach) == 0.0
    # on the same body the measured on-body channel already covers the antennas
    assert medium.antenna_gains(stomach, wrist) == 0.0


def test_idle_energy_is_charged_per_interface(network_factory):
    _, _, network = network_factory(Strategy.CLUSTERED, ONE_BODY)
    by_role = network.energy_by_role(now=10.0)
    idle = 10.0 * 3.0 * 0.426e-3
    assert by_role[Role.SENSOR] == pytest.approx([idle] * 4)
    assert by_role[Role.LEADER] == pytest.approx([2 * idle])
    assert by_role[Role.COORDINATOR] == []


def test_cbr_generation_count(network_factory):
    sim, _, network = network_factory(Strategy.CLUSTERED, ONE_BODY)
    network.start(TrafficConfig(payload_bytes=16, interval_s=0.25), duration=60.0)
    sim.run_until(60.0)
    assert sorted(network.generated_by) == [1, 2, 3, 4]
    assert all(count == 240 for count in network.generated_by.values())
    assert network.metrics.generated == 960
    delivered, dropped, in_flight = network.metrics.counts()
    assert delivered + dropped + in_flight == 960
    hops = {record.hops for record in network.metrics.records.values() if record.delivered}
    assert hops == {1}


def test_sensor_frames_stay_on_their_body(network_factory):
    sim, medium, network = network_factory(Strategy.CLUSTERED, TWO_BODIES)
    channel_of_port = {iface.port_id: iface.channel_id for stack in network for iface in stack.ifaces}
    sensor_frames = []
    mixed_channels = []

    def observe(transmission):
        if any(channel_of_port[port] != transmission.channel_id for port in transmission.rx_power):
            mixed_channels.append(transmission)
        frame = transmission.frame
        if network.stacks[frame.src].role.role is Role.SENSOR:
            sensor_frames.append(frame)

    medium.add_observer(observe)
    network.start(TrafficConfig(), duration=5.0)
    sim.run_until(6.0)

    assert sensor_frames
    for frame in sensor_frames:
        assert frame.frame_type is FrameType.DATA
        assert frame.dst != BROADCAST
        assert split_node(frame.dst)[0] == split_node(frame.src)[0]
    assert mixed_channels == []


def test_remote_body_packets_take_at_least_two_hops(network_factory):
    sim, _, network = network_factory(Strategy.CLUSTERED, TWO_BODIES)
    network.start(TrafficConfig(), duration=5.0)
    sim.run_until(6.0)
    remote = [
        record
        for record in network.metrics.records.values()
        if record.delivered
        and split_node(record.source)[0] == 1
        and split_node(record.source)[1] != COORDINATOR_SLOT
    ]
    assert remote
    assert all(record.hops >= 2 for record in remote)
    assert network.routing_counters().rrep_sent >= 1


def test_distributed_sensors_reach_leader(network_factory):
    sim, _, network = network_factory(Strategy.DISTRIBUTED, ONE_BODY)
    network.start(TrafficConfig(), duration=5.0)
    sim.run_until(6.0)
    delivered = [record for record in network.metrics.records.values() if record.delivered]
    assert delivered
    assert min(record.hops for record in delivered) == 1
    assert network.mac_counters().tx_attempts > 0
    rows = network.route_rows()
    assert any(row[2] == network.leader for row in rows)
