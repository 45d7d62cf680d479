from __future__ import annotations

import csv

import pytest

from services.dissemination import Strategy, TrafficConfig
from services.experiment_service import (
    PointSpec,
    TraceOptions,
    all_runs,
    expand_grid,
    run_iteration,
    run_points,
)
from services.metrics import summarize_point
from services.mobility import GroupLayout
from services.output_writers import RUN_COLUMNS, write_aggregate_csv, write_runs_csv
from services.phy_channel import Modulation, PhyConfig

SMALL = PointSpec(
    layout=GroupLayout(groups=1, members_per_group=2),
    duration_s=3.0,
    iterations=2,
    base_seed=21,
)

PAYLOADS = [16, 32, 64, 128, 256, 512, 1024]


def test_point_label():
    assert PointSpec().label == "Clustered_2450_DQPSK_16B_1s"
    point = PointSpec(
        strategy=Strategy.DISTRIBUTED,
        phy=PhyConfig(900, Modulation.DBPSK),
        traffic=TrafficConfig(payload_bytes=256, interval_s=0.25),
    )
    assert point.label == "Distributed_900_DBPSK_256B_0.25s"
    assert point.axis_value("payload_bytes") == 256


def test_point_validation():
    with pytest.raises(ValueError):
        PointSpec(duration_s=0.0)
    with pytest.raises(ValueError):
        PointSpec(iterations=0)


def test_full_grid_has_fifty_six_points():
    points = expand_grid(
        PointSpec(),
        {
            "strategy": ["Clustered", "Distributed"],
            "frequency_mhz": [900, 2450],
            "modulation": ["DBPSK", "DQPSK"],
            "payload_bytes": PAYLOADS,
            "interval_s": [1.0],
        },
    )
    assert len(points) == 56
    assert len({point.label for point in points}) == 56
    assert points[0].label == "Clustered_900_DBPSK_16B_1s"


def test_grid_with_bad_values_is_rejected_up_front():
    with pytest.raises(ValueError) as excinfo:
        expand_grid(PointSpec(), {"payload_bytes": [8, 16, 2048], "interval_s": [1.0, 0.3]})
    message = str(excinfo.value)
    assert "'payload_bytes': 8" in message
    assert "'interval_s': 0.3" in message


def test_grid_rejects_unknown_or_empty_axes():
    with pytest.raises(ValueError):
        expand_grid(PointSpec(), {"tx_power": [0]})
    with pytest.raises(ValueError):
        expand_grid(PointSpec(), {"payload_bytes": []})


def test_iteration_is_deterministic():
    first = run_iteration(SMALL, 0)
    second = run_iteration(SMALL, 0)
    assert first.summary.to_row() == second.summary.to_row()
    assert first.edge_counts == second.edge_counts


def test_iteration_uses_base_seed_plus_index():
    summary = run_iteration(SMALL, 1).summary
    assert summary.seed == 22
    assert summary.iteration == 1


def test_iteration_conserves_packets():
    summary = run_iteration(SMALL, 0).summary
    assert summary.generated > 0
    assert summary.delivered + summary.dropped + summary.in_flight == summary.generated
    assert summary.delivered > 0
    assert summary.energy_j_per_node > 0.0
    assert summary.energy_j_coordinator is not None
    assert summary.mac["tx_attempts"] > 0


def test_runs_csv_is_byte_identical_across_invocations(tmp_path):
    paths = []
    for name in ("a.csv", "b.csv"):
        results = run_points([SMALL], progress=False)
        paths.append(write_runs_csv(tmp_path / name, all_runs(results)))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    with paths[0].open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == RUN_COLUMNS
    assert len(rows) == 1 + SMALL.iterations


def test_single_iteration_leaves_confidence_interval_empty(tmp_path):
    point = PointSpec(layout=SMALL.layout, duration_s=2.0, iterations=1)
    result = run_points([point], progress=False)[0]
    path = write_aggregate_csv(tmp_path / "aggregate.csv", [summarize_point(result.runs)])
    with path.open(newline="", encoding="utf-8") as handle:
        row = next(csv.DictReader(handle))
    assert row["iterations"] == "1"
    assert row["prr_ci95"] == ""
    assert row["prr_mean"] != ""


def test_results_keep_point_and_iteration_order():
    points = expand_grid(SMALL, {"payload_bytes": [32, 16]})
    results = run_points(points, progress=False)
    assert [result.point.traffic.payload_bytes for result in results] == [32, 16]
    assert [[run.iteration for run in result.runs] for result in results] == [[0, 1], [0, 1]]


def test_trace_outputs_are_written_atomically(tmp_path):
    traces = TraceOptions(directory=tmp_path, events=True, trajectory=True, route_snapshots=True)
    run_iteration(SMALL, 0, traces)
    stem = f"{SMALL.label}_it0"
    trace = tmp_path / f"trace_{stem}.tsv"
    trajectory = tmp_path / f"trajectory_{stem}.csv"
    routes = tmp_path / f"routes_{stem}.csv"
    assert trace.exists() and trajectory.exists() and routes.exists()
    assert not list(tmp_path.glob("*.tmp"))

    first_line = trace.read_text(encoding="utf-8").splitlines()[0].split("\t")
    assert len(first_line) == 4
    trajectory_lines = trajectory.read_text(encoding="utf-8").splitlines()
    assert trajectory_lines[0] == "t,body_id,node_slot,x,y,z"
    assert len(trajectory_lines) > 1 + 10
    assert routes.read_text(encoding="utf-8").splitlines()[0] == "t,node,dest,next_hop,hops"

    again = tmp_path / "again"
    run_iteration(SMALL, 0, TraceOptions(directory=again, events=True))
    assert (again / f"trace_{stem}.tsv").read_bytes() == trace.read_bytes()


def test_empty_point_list_rejected():
    with pytest.raises(ValueError):
        run_points([], progress=False)


@pytest.mark.slow
def test_default_scenario_runs_csv_is_byte_identical(tmp_path):
    point = PointSpec(iterations=2)
    paths = []
    for name in ("first.csv", "second.csv"):
        results = run_points([point], progress=False)
        paths.append(write_runs_csv(tmp_path / name, all_runs(results)))
    assert paths[0].read_bytes() == paths[1].read_bytes()
