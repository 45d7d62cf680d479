"""Run orchestration: one iteration, one configuration point, and whole sweeps."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from contextlib import ExitStack
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

from joblib import Parallel, delayed
from tqdm import tqdm

from .dissemination import Network, Role, StackConfig, Strategy, TrafficConfig, build_network
from .metrics import MetricsCollector, RunSummary, hop_stats, mean_delay, prr
from .mobility import GroupLayout, GroupMobility, MobilityParams
from .phy_channel import (
    ChannelModel,
    ChannelParams,
    LinkKind,
    Modulation,
    PhyConfig,
    ShadowingProcess,
    default_channel_params,
)
from .radio_medium import RadioMedium
from .sim_core import EventKind, SimulationError, Simulator
from .output_writers import atomic_writer

logger = logging.getLogger(__name__)

GRID_AXES = ("strategy", "frequency_mhz", "modulation", "payload_bytes", "interval_s")


def _default_bands() -> Dict[int, ChannelParams]:
    return {band: default_channel_params(LinkKind.BODY_TO_BODY, band) for band in (900, 2450)}


@dataclass(frozen=True)
class PointSpec:
    """Everything one configuration point needs; picklable for worker processes."""

    strategy: Strategy = Strategy.CLUSTERED
    phy: PhyConfig = field(default_factory=PhyConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    layout: GroupLayout = field(default_factory=GroupLayout)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    on_body: ChannelParams = field(default_factory=lambda: default_channel_params(LinkKind.ON_BODY, 2450))
    body_to_body_bands: Dict[int, ChannelParams] = field(default_factory=_default_bands)
    stack: StackConfig = field(default_factory=StackConfig)
    duration_s: float = 60.0
    iterations: int = 10
    base_seed: int = 1
    cca_threshold_dbm: float = -85.0
    rx_sensitivity_dbm: float = -95.0
    shadowing: bool = True

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("simulation duration must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.phy.frequency_mhz not in self.body_to_body_bands:
            raise ValueError(f"no body-to-body channel parameters for {self.phy.frequency_mhz} MHz")

    @property
    def body_to_body(self) -> ChannelParams:
        return self.body_to_body_bands[self.phy.frequency_mhz]

    @property
    def label(self) -> str:
        return (
            f"{Strategy(self.strategy).value}_{self.phy.frequency_mhz}_{Modulation(self.phy.modulation).value}"
            f"_{self.traffic.payload_bytes}B_{self.traffic.interval_s:g}s"
        )

    def axis_value(self, axis: str) -> Any:
        values = {
            "strategy": Strategy(self.strategy).value,
            "frequency_mhz": self.phy.frequency_mhz,
            "modulation": Modulation(self.phy.modulation).value,
            "payload_bytes": self.traffic.payload_bytes,
            "interval_s": self.traffic.interval_s,
        }
        return values[axis]


@dataclass(frozen=True)
class TraceOptions:
    directory: Optional[Path] = None
    events: bool = False
    trajectory: bool = False
    route_snapshots: bool = False

    @property
    def enabled(self) -> bool:
        return self.directory is not None and (self.events or self.trajectory or self.route_snapshots)


@dataclass
class IterationResult:
    summary: RunSummary
    edge_counts: Counter = field(default_factory=Counter)


@dataclass
class PointResult:
    point: PointSpec
    runs: List[RunSummary]
    edge_counts: Counter

    @property
    def label(self) -> str:
        return self.point.label


def expand_grid(base: PointSpec, axes: Dict[str, Sequence[Any]]) -> List[PointSpec]:
    """Cartesian product of ``axes`` over ``base``; every point is validated before returning.

    Raises:
        ValueError: Listing every invalid point, so nothing runs when any is bad.
    """
    unknown = sorted(set(axes) - set(GRID_AXES))
    if unknown:
        raise ValueError(f"unknown sweep axes: {', '.join(unknown)}")
    for axis, values in axes.items():
        if not values:
            raise ValueError(f"sweep axis '{axis}' is empty")

    combos: List[Dict[str, Any]] = [{}]
    for axis in GRID_AXES:
        values = axes.get(axis)
        if values is None:
            continue
        combos = [{**combo, axis: value} for combo in combos for value in values]

    points: List[PointSpec] = []
    errors: List[str] = []
    for combo in combos:
        try:
            points.append(_apply_axes(base, combo))
        except ValueError as exc:
            errors.append(f"{combo}: {exc}")
    if errors:
        raise ValueError("invalid sweep points:\n  " + "\n  ".join(errors))
    return points


def _apply_axes(base: PointSpec, combo: Dict[str, Any]) -> PointSpec:
    phy = base.phy
    if "frequency_mhz" in combo or "modulation" in combo:
        phy = PhyConfig(
            frequency_mhz=int(combo.get("frequency_mhz", phy.frequency_mhz)),
            modulation=Modulation(combo.get("modulation", phy.modulation)),
            tx_power_dbm=phy.tx_power_dbm,
            channel_id=phy.channel_id,
        )
    traffic = base.traffic
    if "payload_bytes" in combo or "interval_s" in combo:
        traffic = TrafficConfig(
            payload_bytes=int(combo.get("payload_bytes", traffic.payload_bytes)),
            interval_s=float(combo.get("interval_s", traffic.interval_s)),
            coordinators_generate=traffic.coordinators_generate,
        )
    strategy = Strategy(combo.get("strategy", base.strategy))
    return replace(base, strategy=strategy, phy=phy, traffic=traffic)


def _mean_or_none(values: List[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def _open_output(stack: ExitStack, directory: Optional[Path], name: str, enabled: bool) -> Optional[TextIO]:
    if not enabled or directory is None:
        return None
    return stack.enter_context(atomic_writer(directory / name))


def run_iteration(point: PointSpec, iteration: int, traces: TraceOptions = TraceOptions()) -> IterationResult:
    """Simulate one iteration of ``point`` with seed ``base_seed + iteration``."""
    seed = point.base_seed + iteration
    stem = f"{point.label}_it{iteration}"

    with ExitStack() as outputs:
        trace = _open_output(outputs, traces.directory, f"trace_{stem}.tsv", traces.events)
        trajectory = _open_output(outputs, traces.directory, f"trajectory_{stem}.csv", traces.trajectory)
        routes = _open_output(outputs, traces.directory, f"routes_{stem}.csv", traces.route_snapshots)

        sim = Simulator(seed=seed, trace=trace)
        mobility = GroupMobility(point.layout, point.mobility, sim.streams)
        shadowing = (
            ShadowingProcess(seed, point.body_to_body.shadow_coherence_time) if point.shadowing else None
        )
        medium = RadioMedium(
            sim,
            ChannelModel(shadowing),
            mobility,
            point.phy,
            point.on_body,
            point.body_to_body,
            cca_threshold_dbm=point.cca_threshold_dbm,
            rx_sensitivity_dbm=point.rx_sensitivity_dbm,
        )
        metrics = MetricsCollector()
        network = build_network(sim, medium, point.strategy, point.layout, point.phy, point.stack, metrics)
        network.start(point.traffic, point.duration_s)

        trajectory_writer = csv.writer(trajectory, lineterminator="\n") if trajectory is not None else None
        if trajectory_writer is not None:
            trajectory_writer.writerow(("t", "body_id", "node_slot", "x", "y", "z"))
            trajectory_writer.writerows(mobility.trajectory_rows(0.0))

        def step() -> None:
            mobility.advance(point.mobility.step_s)
            if trajectory_writer is not None:
                trajectory_writer.writerows(mobility.trajectory_rows(sim.now))
            sim.schedule_in(point.mobility.step_s, "mobility", EventKind.MOBILITY_STEP, step)

        sim.schedule_in(point.mobility.step_s, "mobility", EventKind.MOBILITY_STEP, step)

        if routes is not None:
            route_writer = csv.writer(routes, lineterminator="\n")
            route_writer.writerow(("t", "node", "dest", "next_hop", "hops"))

            def snapshot() -> None:
                route_writer.writerows(network.route_rows())
                schedule_snapshot()

            def schedule_snapshot() -> None:
                sim.schedule_in(
                    point.stack.routing.hello_interval, "routes", EventKind.TIMER, snapshot, observer=True
                )

            schedule_snapshot()

        try:
            sim.run_until(point.duration_s)
        except (ValueError, KeyError, IndexError) as exc:
            raise SimulationError(f"run {stem} failed at t={sim.now:.6f}: {exc}") from exc

    summary = _summarize(point, iteration, seed, network, metrics)
    logger.debug("Finished %s: PRR %.3f", stem, summary.prr)
    return IterationResult(summary=summary, edge_counts=Counter(metrics.edge_counts))


def _summarize(
    point: PointSpec,
    iteration: int,
    seed: int,
    network: Network,
    metrics: MetricsCollector,
) -> RunSummary:
    now = network.sim.now
    for stack in network:
        for iface in stack.ifaces:
            iface.energy.settle(now)
    records = list(metrics.records.values())
    delivered, dropped, in_flight = metrics.counts()
    by_role = network.energy_by_role(now)
    all_energy = [value for values in by_role.values() for value in values]
    total_energy = math.fsum(all_energy)
    mac = network.mac_counters()
    routing = network.routing_counters()
    return RunSummary(
        strategy=Strategy(point.strategy).value,
        frequency_mhz=point.phy.frequency_mhz,
        modulation=Modulation(point.phy.modulation).value,
        payload_bytes=point.traffic.payload_bytes,
        interval_s=point.traffic.interval_s,
        iteration=iteration,
        seed=seed,
        generated=metrics.generated,
        delivered=delivered,
        dropped=dropped,
        in_flight=in_flight,
        prr=prr(records) if records else 0.0,
        mean_delay_s=mean_delay(records),
        energy_j_per_node=total_energy / len(all_energy),
        energy_j_sensor=_mean_or_none(by_role[Role.SENSOR]),
        energy_j_coordinator=_mean_or_none(by_role[Role.COORDINATOR]),
        energy_j_leader=by_role[Role.LEADER][0],
        energy_j_per_delivered=total_energy / delivered if delivered else None,
        hops=hop_stats(records),
        mac={item.name: getattr(mac, item.name) for item in fields(mac)},
        routing={item.name: getattr(routing, item.name) for item in fields(routing)},
        drops={cause.value: count for cause, count in metrics.drops_by_cause().items()},
    )


def run_points(
    points: Sequence[PointSpec],
    traces: TraceOptions = TraceOptions(),
    workers: int = 1,
    progress: bool = True,
) -> List[PointResult]:
    """Run every iteration of every point; results come back in (point, iteration) order."""
    if not points:
        raise ValueError("nothing to run: the point list is empty")
    tasks: List[Tuple[int, int]] = [
        (index, iteration) for index, point in enumerate(points) for iteration in range(point.iterations)
    ]
    logger.info("Running %d points, %d simulations with %d worker(s)", len(points), len(tasks), workers)
    results = Parallel(n_jobs=workers, return_as="generator")(
        delayed(run_iteration)(points[index], iteration, traces) for index, iteration in tasks
    )
    grouped: List[List[IterationResult]] = [[] for _ in points]
    for (index, _), result in tqdm(zip(tasks, results), total=len(tasks), disable=not progress, unit="run"):
        grouped[index].append(result)
    point_results = []
    for point, items in zip(points, grouped):
        edges: Counter = Counter()
        for item in items:
            edges.update(item.edge_counts)
        point_results.append(PointResult(point=point, runs=[item.summary for item in items], edge_counts=edges))
    return point_results


def run_scenario(point: PointSpec, **kwargs: Any) -> PointResult:
    return run_points([point], **kwargs)[0]


def sweep(base: PointSpec, axes: Dict[str, Sequence[Any]], **kwargs: Any) -> List[PointResult]:
    return run_points(expand_grid(base, axes), **kwargs)


def all_runs(results: Iterable[PointResult]) -> List[RunSummary]:
    return [run for result in results for run in result.runs]
