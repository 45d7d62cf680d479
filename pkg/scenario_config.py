"""Loading and validation of scenario configuration documents."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from services.dissemination import (
    ALLOWED_INTERVALS,
    EnergyParams,
    StackConfig,
    Strategy,
    TrafficConfig,
)
from services.experiment_service import PointSpec, expand_grid
from services.mac_csma import MacConfig
from services.mobility import NODES_PER_BODY, GroupLayout, MobilityParams, Posture, PostureSchedule
from services.phy_channel import ChannelParams, LinkKind, Modulation, PhyConfig
from services.routing_dymo import RoutingConfig

LOGGER = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "WBBN_OUTPUT_DIR"
DEFAULT_PAYLOADS = [16, 32, 64, 128, 256, 512, 1024]


@dataclass(eq=False)
class ConfigError(Exception):
    """Invalid scenario document; ``line`` is 1-based when the offending key was found."""

    message: str
    line: Optional[int] = None
    path: Optional[str] = None
    exit_code: int = 1

    def __str__(self) -> str:
        where = self.path or "<config>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"{where}: {self.message}"


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PostureStep(_Block):
    posture: Posture
    duration_s: float = Field(..., gt=0, description="Time spent in this posture before the next step.")


def _default_schedule() -> List[PostureStep]:
    return [PostureStep(posture=posture, duration_s=duration) for posture, duration in PostureSchedule().steps]


class Topology(_Block):
    groups: int = Field(4, ge=1, description="Number of groups in the formation.")
    members_per_group: int = Field(3, ge=1, description="Bodies per group.")
    intra_spacing_m: float = Field(8.0, gt=0, description="Distance between neighbouring bodies of a group.")
    inter_spacing_m: float = Field(20.0, gt=0, description="Distance between neighbouring group centers.")
    field_size_m: float = Field(100.0, gt=0, description="Side of the square the formation roams in.")
    group_radius_m: float = Field(6.0, gt=0, description="Maximum body distance from its group center.")
    body_jitter_m: float = Field(0.5, ge=0, description="Per-step random displacement of moving bodies.")
    follow_jitter_m: float = Field(1.0, ge=0, description="Scatter of follower waypoints around the leader's.")
    mobility_step_s: float = Field(0.1, gt=0)
    group_phase_s: float = Field(0.0, ge=0, description="Posture schedule shift between consecutive groups.")
    posture_schedule: List[PostureStep] = Field(default_factory=_default_schedule, min_length=1)
    leader_body: int = Field(0, ge=0, description="Body whose coordinator is the team leader sink.")
    coordinator_slot: int = Field(0, ge=0, lt=NODES_PER_BODY, description="On-body slot acting as coordinator.")

    @model_validator(mode="after")
    def _leader_exists(self) -> "Topology":
        bodies = self.groups * self.members_per_group
        if self.leader_body >= bodies:
            raise ValueError(f"leader_body {self.leader_body} does not exist among {bodies} bodies")
        return self


class LinkParams(_Block):
    pl0_db: float
    d0_m: float = Field(..., gt=0)
    exponent: float = Field(..., gt=0)
    shadow_sigma_db: float = Field(..., ge=0)


class Channel(_Block):
    on_body: LinkParams = LinkParams(pl0_db=35.2, d0_m=0.1, exponent=3.35, shadow_sigma_db=4.9)
    body_to_body_900: LinkParams = LinkParams(pl0_db=46.0, d0_m=1.0, exponent=3.4, shadow_sigma_db=5.0)
    body_to_body_2450: LinkParams = LinkParams(pl0_db=48.4, d0_m=1.0, exponent=3.11, shadow_sigma_db=6.1)
    noise_figure_db: float = 10.0
    bandwidth_hz: float = Field(1.0e6, gt=0)
    shadowing: bool = True
    shadow_coherence_s: float = Field(5.0, gt=0, description="Shadowing coherence of body-to-body links.")
    on_body_shadow_coherence_s: float = Field(1.0, gt=0, description="Shadowing coherence of on-body links.")
    rx_sensitivity_dbm: float = -95.0
    coordinator_gain_db: float = Field(4.0, description="Off-body antenna gain of clustered coordinators.")
    sensor_body_loss_db: float = Field(3.0, ge=0, description="Body shadowing of sensor slots on body-to-body links.")


class Mac(_Block):
    cw_min: int = Field(16, ge=1)
    cw_max: int = Field(64, ge=1)
    slot_s: float = Field(145e-6, gt=0)
    sifs_s: float = Field(75e-6, gt=0)
    max_retries: int = Field(7, ge=0)
    queue_capacity: int = Field(50, ge=1)
    relay_queue_capacity: int = Field(50, ge=1, description="Queue of the coordinator's inter-body interface.")
    dedup_window: int = Field(16, ge=1)
    cca_threshold_dbm: float = -85.0

    @model_validator(mode="after")
    def _window_order(self) -> "Mac":
        if self.cw_min > self.cw_max:
            raise ValueError("cw_min must not exceed cw_max")
        return self


class Routing(_Block):
    hello_interval_s: float = Field(3.0, gt=0)
    neighbor_timeout_s: float = Field(9.0, gt=0)
    route_lifetime_s: float = Field(10.0, gt=0)
    discovery_timeout_s: float = Field(2.0, gt=0)
    discovery_attempts: int = Field(3, ge=1)
    buffer_per_dest: int = Field(10, ge=1)
    energy_threshold: float = Field(0.05, ge=0, le=1)
    hello_bytes: int = Field(4, ge=1)


class Energy(_Block):
    voltage_v: float = Field(3.0, ge=3.0, le=3.0, description="Supply voltage; the energy model is defined at 3 V.")
    i_tx_ma: float = Field(17.4, ge=0)
    i_rx_ma: float = Field(18.8, ge=0)
    i_idle_ma: float = Field(0.426, ge=0)
    initial_energy_j: float = Field(10.0, gt=0, description="Battery budget behind the routing energy gate.")


class Traffic(_Block):
    payload_bytes: int = Field(16, ge=16, le=1024)
    interval_s: float = 1.0
    coordinators_generate: bool = True

    @field_validator("interval_s")
    @classmethod
    def _known_interval(cls, value: float) -> float:
        if value not in ALLOWED_INTERVALS:
            raise ValueError(f"interval_s must be one of {list(ALLOWED_INTERVALS)}")
        return value


class Output(_Block):
    directory: str = "results"
    trace_events: bool = False
    trajectory: bool = False
    route_snapshots: bool = False
    topology_dot: bool = True


class Sweep(_Block):
    strategy: List[Strategy] = Field(default_factory=lambda: [Strategy.CLUSTERED, Strategy.DISTRIBUTED], min_length=1)
    frequency_mhz: List[Literal[900, 2450]] = Field(default_factory=lambda: [900, 2450], min_length=1)
    modulation: List[Modulation] = Field(default_factory=lambda: [Modulation.DBPSK, Modulation.DQPSK], min_length=1)
    payload_bytes: List[int] = Field(default_factory=lambda: list(DEFAULT_PAYLOADS), min_length=1)
    interval_s: List[float] = Field(default_factory=lambda: [1.0], min_length=1)


class ScenarioConfig(_Block):
    """Complete description of one experiment, with every default filled in."""

    strategy: Strategy = Strategy.CLUSTERED
    frequency_mhz: Literal[900, 2450] = 2450
    modulation: Modulation = Modulation.DQPSK
    tx_power_dbm: float = 0.0
    sim_duration_s: float = Field(60.0, gt=0)
    iterations: int = Field(10, ge=1)
    seed: int = Field(1, ge=0)
    topology: Topology = Field(default_factory=Topology)
    traffic: Traffic = Field(default_factory=Traffic)
    channel: Channel = Field(default_factory=Channel)
    mac: Mac = Field(default_factory=Mac)
    routing: Routing = Field(default_factory=Routing)
    energy: Energy = Field(default_factory=Energy)
    output: Output = Field(default_factory=Output)
    sweep: Sweep = Field(default_factory=Sweep)


def load_scenario_config(config_path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario document.

    Args:
        config_path: JSON document; absent keys take their defaults.

    Returns:
        The validated configuration.

    Raises:
        FileNotFoundError: If the configuration file does not exist.
        ConfigError: If the document is not valid JSON or breaks a constraint.
    """
    path = Path(config_path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario configuration file not found: {path}")

    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from exc
    if not isinstance(payload, dict):
        raise ConfigError("scenario configuration must be a JSON object", line=1, path=str(path))

    config = parse_scenario_config(payload, text=text, source=str(path))
    LOGGER.debug("Loaded scenario configuration from %s", path)
    return config


def parse_scenario_config(
    payload: Dict[str, Any],
    text: Optional[str] = None,
    source: Optional[str] = None,
) -> ScenarioConfig:
    try:
        config = ScenarioConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<root>"
        line = _locate_line(text, first["loc"]) if text is not None else None
        extra = f" (and {exc.error_count() - 1} more)" if exc.error_count() > 1 else ""
        raise ConfigError(f"{location}: {first['msg']}{extra}", line=line, path=source) from exc
    try:
        to_point_spec(config)
    except ValueError as exc:
        raise ConfigError(str(exc), path=source) from exc
    return config


def _locate_line(text: str, loc: Sequence[Any]) -> Optional[int]:
    """Best-effort 1-based line of the key path ``loc`` inside ``text``."""
    position = 0
    line: Optional[int] = None
    skip = 0
    for part in loc:
        if isinstance(part, int):
            skip = part
            continue
        pattern = re.compile(rf'"{re.escape(str(part))}"\s*:')
        match = None
        for _ in range(skip + 1):
            match = pattern.search(text, position)
            if match is None:
                break
            position = match.end()
        skip = 0
        if match is None:
            break
        line = text.count("\n", 0, match.start()) + 1
    return line


def _channel_params(kind: LinkKind, link: LinkParams, channel: Channel) -> ChannelParams:
    coherence = channel.on_body_shadow_coherence_s if kind is LinkKind.ON_BODY else channel.shadow_coherence_s
    return ChannelParams(
        link_kind=kind,
        pl0=link.pl0_db,
        d0=link.d0_m,
        exponent=link.exponent,
        shadow_sigma=link.shadow_sigma_db,
        shadow_coherence_time=coherence,
        noise_figure=channel.noise_figure_db,
        bandwidth=channel.bandwidth_hz,
    )


def to_point_spec(config: ScenarioConfig) -> PointSpec:
    """Translate the document into the simulator's configuration point."""
    topology = config.topology
    schedule = PostureSchedule(
        steps=tuple((step.posture, step.duration_s) for step in topology.posture_schedule),
        group_phase_s=topology.group_phase_s,
    )
    routing = config.routing
    mac = config.mac
    energy = config.energy
    channel = config.channel
    return PointSpec(
        strategy=config.strategy,
        phy=PhyConfig(frequency_mhz=config.frequency_mhz, modulation=config.modulation, tx_power_dbm=config.tx_power_dbm),
        traffic=TrafficConfig(
            payload_bytes=config.traffic.payload_bytes,
            interval_s=config.traffic.interval_s,
            coordinators_generate=config.traffic.coordinators_generate,
        ),
        layout=GroupLayout(
            groups=topology.groups,
            members_per_group=topology.members_per_group,
            intra_spacing=topology.intra_spacing_m,
            inter_spacing=topology.inter_spacing_m,
        ),
        mobility=MobilityParams(
            field_size=topology.field_size_m,
            group_radius_bound=topology.group_radius_m,
            body_jitter=topology.body_jitter_m,
            step_s=topology.mobility_step_s,
            follow_jitter=topology.follow_jitter_m,
            schedule=schedule,
        ),
        on_body=_channel_params(LinkKind.ON_BODY, channel.on_body, channel),
        body_to_body_bands={
            900: _channel_params(LinkKind.BODY_TO_BODY, channel.body_to_body_900, channel),
            2450: _channel_params(LinkKind.BODY_TO_BODY, channel.body_to_body_2450, channel),
        },
        stack=StackConfig(
            mac=MacConfig(
                cw_min=mac.cw_min,
                cw_max=mac.cw_max,
                slot_s=mac.slot_s,
                sifs_s=mac.sifs_s,
                max_retries=mac.max_retries,
                queue_capacity=mac.queue_capacity,
                dedup_window=mac.dedup_window,
            ),
            routing=RoutingConfig(
                hello_interval=routing.hello_interval_s,
                neighbor_timeout=routing.neighbor_timeout_s,
                route_lifetime=routing.route_lifetime_s,
                discovery_timeout=routing.discovery_timeout_s,
                discovery_attempts=routing.discovery_attempts,
                buffer_per_dest=routing.buffer_per_dest,
                energy_threshold=routing.energy_threshold,
                hello_bytes=routing.hello_bytes,
            ),
            energy=EnergyParams(
                voltage=energy.voltage_v,
                i_tx_ma=energy.i_tx_ma,
                i_rx_ma=energy.i_rx_ma,
                i_idle_ma=energy.i_idle_ma,
                initial_energy_j=energy.initial_energy_j,
            ),
            relay_queue_capacity=mac.relay_queue_capacity,
            leader_body=topology.leader_body,
            coordinator_slot=topology.coordinator_slot,
            coordinator_gain_db=channel.coordinator_gain_db,
            sensor_body_loss_db=channel.sensor_body_loss_db,
        ),
        duration_s=config.sim_duration_s,
        iterations=config.iterations,
        base_seed=config.seed,
        cca_threshold_dbm=mac.cca_threshold_dbm,
        rx_sensitivity_dbm=channel.rx_sensitivity_dbm,
        shadowing=channel.shadowing,
    )


def sweep_axes(config: ScenarioConfig) -> Dict[str, List[Any]]:
    sweep = config.sweep
    return {
        "strategy": list(sweep.strategy),
        "frequency_mhz": list(sweep.frequency_mhz),
        "modulation": list(sweep.modulation),
        "payload_bytes": list(sweep.payload_bytes),
        "interval_s": list(sweep.interval_s),
    }


def sweep_points(config: ScenarioConfig) -> List[PointSpec]:
    """Every point of the configured grid, validated before anything runs."""
    try:
        return expand_grid(to_point_spec(config), sweep_axes(config))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(config: ScenarioConfig, **overrides: Any) -> ScenarioConfig:
    """Return a re-validated copy with dotted-key overrides applied; ``None`` values are ignored.

    Keys use ``__`` for nesting, e.g. ``traffic__payload_bytes=64`` or ``sweep__payload_bytes=[16]``.
    """
    payload = config.model_dump(mode="json")
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split("__")
        target = payload
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return parse_scenario_config(payload, source="<overrides>")


def resolve_output_dir(config: ScenarioConfig, cli_value: Optional[str], environ: Dict[str, str]) -> Path:
    """Command-line flag first, then ``WBBN_OUTPUT_DIR``, then the document."""
    if cli_value:
        return Path(cli_value)
    env_value = (environ.get(OUTPUT_DIR_ENV) or "").strip()
    if env_value:
        return Path(env_value)
    return Path(config.output.directory)


def effective_config(config: ScenarioConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "apply_overrides",
    "effective_config",
    "load_scenario_config",
    "parse_scenario_config",
    "resolve_output_dir",
    "sweep_points",
    "to_point_spec",
]
