"""Command-line entry point: run one scenario or sweep a parameter grid."""

from __future__ import annotations

import logging
import os
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import colorlog
from dotenv import load_dotenv

from scenario_config import (
    ConfigError,
    ScenarioConfig,
    apply_overrides,
    effective_config,
    load_scenario_config,
    resolve_output_dir,
    sweep_points,
    to_point_spec,
)
from services.experiment_service import PointResult, TraceOptions, all_runs, run_points
from services.metrics import summarize_point
from services.output_writers import (
    write_aggregate_csv,
    write_gnuplot_blocks,
    write_hops_table,
    write_json,
    write_runs_csv,
    write_topology_dot,
)
from services.sim_core import SimulationError

logger = logging.getLogger(__name__)

EXIT_CONFIG = 1
EXIT_RUNTIME = 2

STRATEGIES = ["Clustered", "Distributed"]
MODULATIONS = ["DBPSK", "DQPSK"]
FREQUENCIES = ["900", "2450"]


def configure_logging(level: str) -> None:
    handler = colorlog.StreamHandler()
    handler.setFormatter(
        colorlog.ColoredFormatter("%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s")
    )
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


def common_options(command: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.argument("config_path", type=click.Path(dir_okay=False, path_type=Path)),
        click.option("--seed", type=int, default=None, help="Base seed; iteration k runs with seed + k."),
        click.option("--iterations", type=click.IntRange(min=1), default=None),
        click.option("--duration", "duration_s", type=float, default=None, help="Simulated seconds per run."),
        click.option("--output-dir", type=str, default=None, help="Overrides WBBN_OUTPUT_DIR and the document."),
        click.option("--trace/--no-trace", "trace_events", default=None, help="Write the event trace per run."),
        click.option("--trajectory/--no-trajectory", default=None, help="Write node positions per mobility step."),
        click.option("--route-snapshots/--no-route-snapshots", default=None, help="Write route tables periodically."),
        click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True),
        click.option("--quiet", is_flag=True, help="Hide the progress bar."),
        click.option(
            "--log-level",
            type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
            default="INFO",
            show_default=True,
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _load(config_path: Path, overrides: Dict[str, Any]) -> ScenarioConfig:
    try:
        config = load_scenario_config(config_path)
    except FileNotFoundError as exc:
        raise ConfigError("scenario configuration file not found", path=str(config_path)) from exc
    return apply_overrides(config, **overrides)


def _handle_errors(command: Callable[..., None]) -> Callable[..., None]:
    """Map failures onto exit codes: 1 for configuration, 2 for runtime and I/O."""

    @wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (SimulationError, OSError) as exc:
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def emit_results(
    output_dir: Path,
    config: ScenarioConfig,
    results: Sequence[PointResult],
    sweep_layout: bool,
) -> List[Path]:
    written = [
        write_runs_csv(output_dir / "runs.csv", all_runs(results)),
        write_aggregate_csv(output_dir / "aggregate.csv", [summarize_point(result.runs) for result in results]),
        write_json(output_dir / "effective_config.json", effective_config(config)),
    ]
    if config.output.topology_dot:
        for result in results:
            delivered = sum(run.delivered for run in result.runs)
            written.append(
                write_topology_dot(
                    output_dir / f"topology_{result.label}.dot", result.edge_counts, delivered, result.label
                )
            )
    if sweep_layout:
        rows = [summarize_point(result.runs) for result in results]
        written.extend(write_gnuplot_blocks(output_dir, rows))
        written.append(write_hops_table(output_dir / "hops_table.csv", all_runs(results)))
    return written


def _trace_options(config: ScenarioConfig, output_dir: Path) -> TraceOptions:
    return TraceOptions(
        directory=output_dir / "traces",
        events=config.output.trace_events,
        trajectory=config.output.trajectory,
        route_snapshots=config.output.route_snapshots,
    )


@click.group()
def cli() -> None:
    """Wireless body-to-body network dissemination simulator."""
    load_dotenv()


@cli.command()
@common_options
@click.option("--strategy", type=click.Choice(STRATEGIES), default=None)
@click.option("--frequency", type=click.Choice(FREQUENCIES), default=None)
@click.option("--modulation", type=click.Choice(MODULATIONS), default=None)
@click.option("--payload", type=int, default=None, help="Payload bytes, 16 to 1024.")
@click.option("--interval", type=float, default=None, help="CBR interval: 0.25, 0.5 or 1.0 s.")
@_handle_errors
def run(
    config_path: Path,
    seed: Optional[int],
    iterations: Optional[int],
    duration_s: Optional[float],
    output_dir: Optional[str],
    trace_events: Optional[bool],
    trajectory: Optional[bool],
    route_snapshots: Optional[bool],
    workers: int,
    quiet: bool,
    log_level: str,
    strategy: Optional[str],
    frequency: Optional[str],
    modulation: Optional[str],
    payload: Optional[int],
    interval: Optional[float],
) -> None:
    """Run every iteration of the scenario in CONFIG_PATH."""
    configure_logging(log_level)
    config = _load(
        config_path,
        {
            "seed": seed,
            "iterations": iterations,
            "sim_duration_s": duration_s,
            "output__trace_events": trace_events,
            "output__trajectory": trajectory,
            "output__route_snapshots": route_snapshots,
            "strategy": strategy,
            "frequency_mhz": int(frequency) if frequency else None,
            "modulation": modulation,
            "traffic__payload_bytes": payload,
            "traffic__interval_s": interval,
        },
    )
    directory = resolve_output_dir(config, output_dir, dict(os.environ))
    point = to_point_spec(config)
    logger.info("Scenario %s: %d iteration(s) of %.1f s", point.label, point.iterations, point.duration_s)
    results = run_points([point], _trace_options(config, directory), workers=workers, progress=not quiet)
    written = emit_results(directory, config, results, sweep_layout=False)
    logger.info("Wrote %d file(s) to %s", len(written), directory)


@cli.command()
@common_options
@click.option("--strategy", "strategies", type=click.Choice(STRATEGIES), multiple=True)
@click.option("--frequency", "frequencies", type=click.Choice(FREQUENCIES), multiple=True)
@click.option("--modulation", "modulations", type=click.Choice(MODULATIONS), multiple=True)
@click.option("--payload", "payloads", type=int, multiple=True)
@click.option("--interval", "intervals", type=float, multiple=True)
@_handle_errors
def sweep(
    config_path: Path,
    seed: Optional[int],
    iterations: Optional[int],
    duration_s: Optional[float],
    output_dir: Optional[str],
    trace_events: Optional[bool],
    trajectory: Optional[bool],
    route_snapshots: Optional[bool],
    workers: int,
    quiet: bool,
    log_level: str,
    strategies: Sequence[str],
    frequencies: Sequence[str],
    modulations: Sequence[str],
    payloads: Sequence[int],
    intervals: Sequence[float],
) -> None:
    """Run the Cartesian grid of the sweep block (axes overridable by flags)."""
    configure_logging(log_level)
    config = _load(
        config_path,
        {
            "seed": seed,
            "iterations": iterations,
            "sim_duration_s": duration_s,
            "output__trace_events": trace_events,
            "output__trajectory": trajectory,
            "output__route_snapshots": route_snapshots,
            "sweep__strategy": list(strategies) or None,
            "sweep__frequency_mhz": [int(value) for value in frequencies] or None,
            "sweep__modulation": list(modulations) or None,
            "sweep__payload_bytes": list(payloads) or None,
            "sweep__interval_s": list(intervals) or None,
        },
    )
    directory = resolve_output_dir(config, output_dir, dict(os.environ))
    points = sweep_points(config)
    logger.info("Sweep of %d point(s), %d iteration(s) each", len(points), config.iterations)
    results = run_points(points, _trace_options(config, directory), workers=workers, progress=not quiet)
    written = emit_results(directory, config, results, sweep_layout=True)
    logger.info("Wrote %d file(s) to %s", len(written), directory)


if __name__ == "__main__":
    cli()
