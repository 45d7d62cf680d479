"""Output emission: run and aggregate CSVs, DOT topology, gnuplot blocks and the hop table.

Every file is written to a temporary sibling first and renamed into place, so a
failed run never leaves a partial output behind.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections import Counter
from contextlib import contextmanager
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Sequence, TextIO, Tuple

import pandas as pd

from .mac_csma import MacCounters
from .metrics import DropCause, RunSummary, pool_hop_stats
from .mobility import split_node
from .routing_dymo import RoutingCounters

logger = logging.getLogger(__name__)

UNDEFINED = "undefined"

POINT_COLUMNS = ["strategy", "frequency_mhz", "modulation", "payload_bytes", "interval_s"]

RUN_COLUMNS: List[str] = (
    POINT_COLUMNS
    + [
        "iteration",
        "seed",
        "generated",
        "delivered",
        "dropped",
        "in_flight",
        "prr",
        "mean_delay_ms",
        "energy_mj_per_node",
        "energy_mj_sensor",
        "energy_mj_coordinator",
        "energy_mj_leader",
        "energy_mj_per_delivered",
        "hop_min",
        "hop_avg",
        "hop_max",
    ]
    + [f"mac_{item.name}" for item in fields(MacCounters)]
    + [f"routing_{item.name}" for item in fields(RoutingCounters)]
    + [f"drops_{cause.value.replace('-', '_')}" for cause in DropCause]
)

AGGREGATE_METRICS = ["prr", "mean_delay_ms", "energy_mj_per_node", "energy_mj_per_delivered"]

AGGREGATE_COLUMNS: List[str] = (
    POINT_COLUMNS
    + ["iterations"]
    + [f"{metric}_{suffix}" for metric in AGGREGATE_METRICS for suffix in ("mean", "ci95")]
    + ["hop_min", "hop_avg", "hop_max"]
)

HOPS_COLUMNS = ["strategy", "frequency_mhz", "modulation", "hop_min", "hop_avg", "hop_max", "delivered"]

GNUPLOT_METRICS = ("prr", "mean_delay_ms", "energy_mj_per_node", "energy_mj_per_delivered")


@contextmanager
def atomic_writer(path: str | Path) -> Iterator[TextIO]:
    """Open a text handle whose content replaces ``path`` only on a clean exit."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w",
        dir=target.parent,
        prefix=f".{target.name}.",
        suffix=".tmp",
        delete=False,
        encoding="utf-8",
        newline="",
    )
    try:
        yield handle
        handle.flush()
        os.fsync(handle.fileno())
        handle.close()
        os.replace(handle.name, target)
    except BaseException:
        handle.close()
        Path(handle.name).unlink(missing_ok=True)
        raise


def _frame(rows: Sequence[Mapping[str, Any]], columns: List[str]) -> pd.DataFrame:
    return pd.DataFrame([[row.get(column) for column in columns] for row in rows], columns=columns, dtype=object)


def _write_frame(path: Path, frame: pd.DataFrame) -> Path:
    with atomic_writer(path) as handle:
        frame.to_csv(handle, index=False, na_rep="", lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_runs_csv(path: str | Path, runs: Sequence[RunSummary]) -> Path:
    rows = []
    for run in runs:
        row = run.to_row()
        if row["mean_delay_ms"] is None:
            row["mean_delay_ms"] = UNDEFINED
        rows.append(row)
    return _write_frame(Path(path), _frame(rows, RUN_COLUMNS))


def write_aggregate_csv(path: str | Path, rows: Sequence[Dict[str, Any]]) -> Path:
    prepared = []
    for row in rows:
        row = dict(row)
        if row.get("mean_delay_ms_mean") is None:
            row["mean_delay_ms_mean"] = UNDEFINED
        prepared.append(row)
    return _write_frame(Path(path), _frame(prepared, AGGREGATE_COLUMNS))


def write_hops_table(path: str | Path, runs: Sequence[RunSummary]) -> Path:
    """Hop statistics per (strategy, frequency, modulation), pooled over payloads and iterations."""
    grouped: Dict[Tuple[str, int, str], List[RunSummary]] = {}
    for run in runs:
        grouped.setdefault((run.strategy, run.frequency_mhz, run.modulation), []).append(run)
    rows = []
    for (strategy, frequency, modulation), members in sorted(grouped.items()):
        pooled = pool_hop_stats(run.hops for run in members)
        rows.append(
            {
                "strategy": strategy,
                "frequency_mhz": frequency,
                "modulation": modulation,
                "hop_min": None if pooled is None else pooled.min,
                "hop_avg": None if pooled is None else pooled.avg,
                "hop_max": None if pooled is None else pooled.max,
                "delivered": 0 if pooled is None else pooled.count,
            }
        )
    return _write_frame(Path(path), _frame(rows, HOPS_COLUMNS))


def _node_label(node: int) -> str:
    body, slot = split_node(node)
    return f"b{body}.{slot}"


def render_topology_dot(edge_counts: Counter, delivered: int, name: str = "wbbn") -> str:
    """DOT digraph of edges that carried at least one delivered packet, labelled by traffic share."""
    lines = [f'digraph "{name}" {{', "  rankdir=LR;"]
    edges = sorted((edge, count) for edge, count in edge_counts.items() if count > 0)
    nodes = sorted({node for (src, dst), _ in edges for node in (src, dst)})
    for node in nodes:
        lines.append(f'  n{node} [label="{_node_label(node)}"];')
    for (src, dst), count in edges:
        share = count / delivered if delivered else 0.0
        lines.append(f'  n{src} -> n{dst} [label="{share:.3f}", weight={count}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_topology_dot(path: str | Path, edge_counts: Counter, delivered: int, name: str = "wbbn") -> Path:
    target = Path(path)
    with atomic_writer(target) as handle:
        handle.write(render_topology_dot(edge_counts, delivered, name))
    logger.info("Wrote %s", target)
    return target


def _gnuplot_value(value: Any) -> str:
    if value is None or value == UNDEFINED:
        return "NaN"
    return repr(float(value))


def write_gnuplot_blocks(directory: str | Path, rows: Sequence[Dict[str, Any]]) -> List[Path]:
    """One file per metric; one indexable block per (strategy, frequency, modulation, interval) series."""
    series: Dict[Tuple[str, int, str, float], List[Dict[str, Any]]] = {}
    for row in rows:
        key = (row["strategy"], row["frequency_mhz"], row["modulation"], row["interval_s"])
        series.setdefault(key, []).append(row)
    written = []
    for metric in GNUPLOT_METRICS:
        target = Path(directory) / f"gnuplot_{metric}.dat"
        with atomic_writer(target) as handle:
            for index, (key, members) in enumerate(sorted(series.items())):
                strategy, frequency, modulation, interval = key
                if index:
                    handle.write("\n\n")
                handle.write(f"# {strategy} {frequency}MHz {modulation} interval={interval:g}s\n")
                handle.write(f"# payload_bytes {metric}_mean {metric}_ci95\n")
                for row in sorted(members, key=lambda item: item["payload_bytes"]):
                    mean = row.get(f"{metric}_mean")
                    half = row.get(f"{metric}_ci95")
                    handle.write(f"{row['payload_bytes']} {_gnuplot_value(mean)} {_gnuplot_value(half)}\n")
        written.append(target)
    logger.info("Wrote %d gnuplot data files to %s", len(written), directory)
    return written


def write_json(path: str | Path, payload: Any) -> Path:
    target = Path(path)
    with atomic_writer(target) as handle:
        json.dump(payload, handle, indent=2, sort_keys=False)
        handle.write("\n")
    return target
