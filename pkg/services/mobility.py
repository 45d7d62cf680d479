"""Group mobility and on-body posture model for the body-to-body scenario."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .sim_core import RandomStreams, draw_uniform

logger = logging.getLogger(__name__)

NODES_PER_BODY = 5
COORDINATOR_SLOT = 0

Vector = Tuple[float, float, float]


class Posture(str, Enum):
    SITTING = "Sitting"
    STANDING = "Standing"
    WALKING = "Walking"
    RUNNING = "Running"

    @property
    def speed(self) -> float:
        return POSTURE_SPEED[self]

    @property
    def gait_period(self) -> float | None:
        return GAIT_PERIOD.get(self)


POSTURE_SPEED: Dict[Posture, float] = {
    Posture.SITTING: 0.0,
    Posture.STANDING: 0.0,
    Posture.WALKING: 0.5,
    Posture.RUNNING: 3.0,
}

GAIT_PERIOD: Dict[Posture, float] = {
    Posture.WALKING: 1.2,
    Posture.RUNNING: 0.6,
}

# (forward, lateral-left, height) in metres relative to the body reference point on the ground.
# Slots: 0 stomach (coordinator), 1 head, 2 right shoulder, 3 right wrist, 4 right ankle.
UPRIGHT_TEMPLATE: Dict[int, Vector] = {
    0: (0.0, 0.0, 1.10),
    1: (0.0, 0.0, 1.70),
    2: (0.0, -0.20, 1.45),
    3: (0.0, -0.20, 0.90),
    4: (0.0, -0.10, 0.10),
}

SITTING_TEMPLATE: Dict[int, Vector] = {
    0: (0.0, 0.0, 0.60),
    1: (0.0, 0.0, 1.20),
    2: (0.0, -0.20, 0.95),
    3: (0.25, -0.20, 0.65),
    4: (0.45, -0.10, 0.10),
}

# slot -> (fore-aft amplitude in metres, phase in radians)
LIMB_SWING: Dict[int, Tuple[float, float]] = {
    3: (0.30, 0.0),
    4: (0.35, math.pi),
}

MAX_NODE_OFFSET = 2.0


def posture_template(posture: Posture) -> Dict[int, Vector]:
    if posture is Posture.SITTING:
        return dict(SITTING_TEMPLATE)
    return dict(UPRIGHT_TEMPLATE)


def node_id(body_id: int, slot: int) -> int:
    return body_id * NODES_PER_BODY + slot


def split_node(node: int) -> Tuple[int, int]:
    return divmod(node, NODES_PER_BODY)


@dataclass(frozen=True)
class BodyPose:
    body_id: int
    group_id: int
    reference_point: Vector
    heading: float
    posture: Posture
    node_offsets: Mapping[int, Vector]

    def __post_init__(self) -> None:
        if len(self.node_offsets) != NODES_PER_BODY:
            raise ValueError(f"Body {self.body_id} must define exactly {NODES_PER_BODY} node slots.")
        for slot, offset in self.node_offsets.items():
            if math.sqrt(sum(component * component for component in offset)) > MAX_NODE_OFFSET:
                raise ValueError(f"Offset of slot {slot} on body {self.body_id} exceeds {MAX_NODE_OFFSET} m.")


@dataclass(frozen=True)
class GroupLayout:
    """Formation of the bodies at t=0: groups on a line, members on a regular polygon."""

    groups: int = 4
    members_per_group: int = 3
    intra_spacing: float = 8.0
    inter_spacing: float = 20.0

    def __post_init__(self) -> None:
        if self.groups < 1 or self.members_per_group < 1:
            raise ValueError("GroupLayout needs at least one group and one member per group.")
        if self.intra_spacing <= 0 or self.inter_spacing <= 0:
            raise ValueError("GroupLayout spacings must be positive.")

    @property
    def body_count(self) -> int:
        return self.groups * self.members_per_group

    @property
    def group_centers(self) -> List[Vector]:
        return [(g * self.inter_spacing, 0.0, 0.0) for g in range(self.groups)]

    def member_radius(self) -> float:
        n = self.members_per_group
        if n == 1:
            return 0.0
        if n == 2:
            return self.intra_spacing / 2.0
        return self.intra_spacing / (2.0 * math.sin(math.pi / n))

    def member_offsets(self) -> List[Vector]:
        n = self.members_per_group
        radius = self.member_radius()
        if n == 1:
            return [(0.0, 0.0, 0.0)]
        offsets = []
        for member in range(n):
            angle = math.pi / 2.0 + 2.0 * math.pi * member / n
            offsets.append((radius * math.cos(angle), radius * math.sin(angle), 0.0))
        return offsets


@dataclass(frozen=True)
class PostureSchedule:
    """Cyclic posture timeline shared by every group, shifted by a per-group phase."""

    steps: Tuple[Tuple[Posture, float], ...] = (
        (Posture.STANDING, 10.0),
        (Posture.WALKING, 20.0),
        (Posture.RUNNING, 10.0),
        (Posture.SITTING, 10.0),
    )
    group_phase_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("Posture schedule must contain at least one step.")
        if any(duration <= 0 for _, duration in self.steps):
            raise ValueError("Posture schedule durations must be positive.")

    @property
    def cycle(self) -> float:
        return sum(duration for _, duration in self.steps)

    def posture_at(self, t: float, group_id: int = 0) -> Posture:
        position = (t + group_id * self.group_phase_s) % self.cycle
        for posture, duration in self.steps:
            if position < duration:
                return posture
            position -= duration
        return self.steps[-1][0]


@dataclass(frozen=True)
class MobilityParams:
    field_size: float = 100.0
    group_radius_bound: float = 6.0
    body_jitter: float = 0.5
    step_s: float = 0.1
    follow_jitter: float = 1.0
    schedule: PostureSchedule = field(default_factory=PostureSchedule)


def initial_layout(config: GroupLayout, posture: Posture = Posture.STANDING) -> List[BodyPose]:
    """Place every body of every group for t=0."""
    poses: List[BodyPose] = []
    member_offsets = config.member_offsets()
    template = posture_template(posture)
    for group_id, center in enumerate(config.group_centers):
        for member, offset in enumerate(member_offsets):
            body_id = group_id * config.members_per_group + member
            reference = (center[0] + offset[0], center[1] + offset[1], 0.0)
            poses.append(
                BodyPose(
                    body_id=body_id,
                    group_id=group_id,
                    reference_point=reference,
                    heading=0.0,
                    posture=posture,
                    node_offsets=template,
                )
            )
    return poses


def node_position(pose: BodyPose, node_slot: int, t: float) -> Vector:
    """World position of ``node_slot`` on ``pose`` at time ``t``."""
    if node_slot not in pose.node_offsets:
        raise ValueError(f"Unknown node slot {node_slot}; expected 0..{NODES_PER_BODY - 1}.")
    forward, lateral, height = pose.node_offsets[node_slot]
    period = pose.posture.gait_period
    if period is not None and node_slot in LIMB_SWING:
        amplitude, phase = LIMB_SWING[node_slot]
        forward += amplitude * math.sin(2.0 * math.pi * t / period + phase)
    cos_h = math.cos(pose.heading)
    sin_h = math.sin(pose.heading)
    x, y, z = pose.reference_point
    return (
        x + forward * cos_h - lateral * sin_h,
        y + forward * sin_h + lateral * cos_h,
        z + height,
    )


def node_distance(poses: Sequence[BodyPose], a: int, b: int, t: float) -> float:
    if a == b:
        return 0.0
    body_a, slot_a = split_node(a)
    body_b, slot_b = split_node(b)
    return math.dist(node_position(poses[body_a], slot_a, t), node_position(poses[body_b], slot_b, t))


@dataclass
class _GroupState:
    center: np.ndarray
    waypoint: np.ndarray
    formation_offset: np.ndarray
    heading: float = 0.0
    odometer: float = 0.0


class GroupMobility:
    """Reference-point group mobility.

    Group 0 wanders between random waypoints inside the field; the other groups
    aim at group 0's waypoint shifted by their formation offset. Bodies keep
    their polygon offset from the group center plus jitter while moving.
    """

    def __init__(
        self,
        layout: GroupLayout,
        params: MobilityParams,
        streams: RandomStreams,
    ) -> None:
        self.layout = layout
        self.params = params
        self._streams = streams
        self.time = 0.0
        initial_posture = params.schedule.posture_at(0.0, 0)
        self.poses: List[BodyPose] = initial_layout(layout, initial_posture)
        self._member_offsets = [np.array(offset) for offset in layout.member_offsets()]
        self.radius_bound = params.group_radius_bound
        if layout.member_radius() > self.radius_bound:
            logger.warning(
                "Formation radius %.2f m exceeds the group bound %.2f m; widening the bound.",
                layout.member_radius(),
                self.radius_bound,
            )
            self.radius_bound = layout.member_radius()

        centers = [np.array(center[:2]) for center in layout.group_centers]
        centroid = np.mean(centers, axis=0)
        half = params.field_size / 2.0
        self._field_lo = centroid - half
        self._field_hi = centroid + half
        self.groups: List[_GroupState] = []
        for center in centers:
            self.groups.append(
                _GroupState(
                    center=center.copy(),
                    waypoint=center.copy(),
                    formation_offset=center - centers[0],
                )
            )
        # group 0 waypoints leave room for the whole formation inside the field
        offsets = np.array([state.formation_offset for state in self.groups])
        self._lead_lo = self._field_lo - offsets.min(axis=0)
        self._lead_hi = self._field_hi - offsets.max(axis=0)
        squeezed = self._lead_lo > self._lead_hi
        if np.any(squeezed):
            logger.warning("Formation does not fit a %.1f m field; followers will be clipped.", params.field_size)
            middle = (self._lead_lo + self._lead_hi) / 2.0
            self._lead_lo = np.where(squeezed, middle, self._lead_lo)
            self._lead_hi = np.where(squeezed, middle, self._lead_hi)
        for group_id in range(len(self.groups)):
            self._pick_waypoint(group_id)

    def _pick_waypoint(self, group_id: int) -> None:
        stream = self._streams.get("mobility-waypoint", group_id)
        state = self.groups[group_id]
        if group_id == 0:
            target = np.array(
                (
                    draw_uniform(stream, self._lead_lo[0], self._lead_hi[0]),
                    draw_uniform(stream, self._lead_lo[1], self._lead_hi[1]),
                )
            )
        else:
            spread = self.params.follow_jitter
            target = self.groups[0].waypoint + state.formation_offset
            target = target + np.array((draw_uniform(stream, -spread, spread), draw_uniform(stream, -spread, spread)))
        state.waypoint = np.clip(target, self._field_lo, self._field_hi)

    def _move_group(self, group_id: int, distance: float) -> None:
        state = self.groups[group_id]
        remaining = distance
        # bounded so a degenerate field cannot stall the loop
        for _ in range(16):
            if remaining <= 0.0:
                break
            delta = state.waypoint - state.center
            gap = float(np.linalg.norm(delta))
            if gap <= remaining:
                if gap > 0.0:
                    state.heading = math.atan2(delta[1], delta[0])
                state.center = state.waypoint.copy()
                state.odometer += gap
                remaining -= gap
                self._pick_waypoint(group_id)
                continue
            state.heading = math.atan2(delta[1], delta[0])
            state.center = state.center + delta / gap * remaining
            state.odometer += remaining
            remaining = 0.0

    def advance(self, dt: float) -> List[BodyPose]:
        """Move every group for ``dt`` seconds and return the new poses."""
        if dt <= 0:
            raise ValueError("advance requires dt > 0")
        schedule = self.params.schedule
        jitter_bound = self.params.body_jitter
        members = self.layout.members_per_group
        new_poses: List[BodyPose] = []
        for group_id, state in enumerate(self.groups):
            posture = schedule.posture_at(self.time, group_id)
            if posture.speed > 0.0:
                self._move_group(group_id, posture.speed * dt)
            template = posture_template(posture)
            for member in range(members):
                body_id = group_id * members + member
                offset = self._member_offsets[member][:2].copy()
                if posture.speed > 0.0 and jitter_bound > 0.0:
                    stream = self._streams.get("mobility-jitter", body_id)
                    offset = offset + np.array(
                        (
                            draw_uniform(stream, -jitter_bound, jitter_bound),
                            draw_uniform(stream, -jitter_bound, jitter_bound),
                        )
                    )
                spread = float(np.linalg.norm(offset))
                if spread > self.radius_bound:
                    offset = offset * (self.radius_bound / spread)
                reference = (float(state.center[0] + offset[0]), float(state.center[1] + offset[1]), 0.0)
                new_poses.append(
                    replace(
                        self.poses[body_id],
                        reference_point=reference,
                        heading=state.heading,
                        posture=posture,
                        node_offsets=template,
                    )
                )
        self.time += dt
        self.poses = new_poses
        return new_poses

    def position(self, node: int, t: float) -> Vector:
        body_id, slot = split_node(node)
        return node_position(self.poses[body_id], slot, t)

    def distance(self, a: int, b: int, t: float) -> float:
        return node_distance(self.poses, a, b, t)

    def group_center(self, group_id: int) -> np.ndarray:
        return self.groups[group_id].center.copy()

    def trajectory_rows(self, t: float) -> Iterator[Tuple[float, int, int, float, float, float]]:
        for pose in self.poses:
            for slot in range(NODES_PER_BODY):
                x, y, z = node_position(pose, slot, t)
                yield (t, pose.body_id, slot, float(x), float(y), float(z))
