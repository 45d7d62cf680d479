"""Per-packet delivery facts and their aggregation into run and sweep statistics."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


class DropCause(str, Enum):
    MAC_QUEUE = "mac-queue"
    MAC_RETRY = "mac-retry"
    DISCOVERY_BUFFER = "discovery-buffer"
    DISCOVERY_FAILED = "discovery-failed"
    NO_ROUTE = "no-route"
    LINK_FAILURE = "link-failure"
    COORDINATOR_UNREACHABLE = "coordinator-unreachable"


@dataclass(frozen=True)
class DataPacket:
    """Application packet as it travels; ``path`` lists every node that held it."""

    id: int
    source: int
    dest: int
    created_t: float
    payload_bytes: int
    path: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.path:
            object.__setattr__(self, "path", (self.source,))

    def hopped(self, node: int) -> "DataPacket":
        return replace(self, path=self.path + (node,))

    @property
    def hops(self) -> int:
        return len(self.path) - 1


@dataclass
class PacketRecord:
    id: int
    source: int
    dest: int
    created_t: float
    payload: int
    delivered_t: Optional[float] = None
    hops: Optional[int] = None
    drop_cause: Optional[DropCause] = None

    @property
    def delivered(self) -> bool:
        return self.delivered_t is not None

    @property
    def in_flight(self) -> bool:
        return self.delivered_t is None and self.drop_cause is None

    @property
    def delay(self) -> Optional[float]:
        if self.delivered_t is None:
            return None
        return self.delivered_t - self.created_t


class MetricsCollector:
    """Owns the packet ledger of one run."""

    def __init__(self) -> None:
        self.records: Dict[int, PacketRecord] = {}
        self.edge_counts: Counter[Tuple[int, int]] = Counter()
        self.duplicate_deliveries = 0
        self._next_id = 0

    def new_packet(self, source: int, dest: int, t: float, payload: int) -> DataPacket:
        packet = DataPacket(id=self._next_id, source=source, dest=dest, created_t=t, payload_bytes=payload)
        self.records[packet.id] = PacketRecord(
            id=packet.id, source=source, dest=dest, created_t=t, payload=payload
        )
        self._next_id += 1
        return packet

    def delivered(self, packet: DataPacket, t: float) -> bool:
        """Record arrival at the sink; only the first copy counts."""
        record = self.records[packet.id]
        if record.delivered_t is not None:
            self.duplicate_deliveries += 1
            return False
        if t < record.created_t:
            raise ValueError(f"Packet {packet.id} delivered at t={t} before creation at t={record.created_t}.")
        # a copy can arrive after its sender already gave up on it (lost ACK)
        record.drop_cause = None
        record.delivered_t = t
        record.hops = packet.hops
        for edge in zip(packet.path, packet.path[1:]):
            self.edge_counts[edge] += 1
        return True

    def dropped(self, packet: DataPacket, cause: DropCause) -> None:
        record = self.records[packet.id]
        if record.delivered_t is not None or record.drop_cause is not None:
            return
        record.drop_cause = DropCause(cause)
        logger.debug("Packet %s from %s dropped: %s", packet.id, packet.source, record.drop_cause.value)

    @property
    def generated(self) -> int:
        return len(self.records)

    def counts(self) -> Tuple[int, int, int]:
        """``(delivered, dropped, in_flight)``; they always sum to ``generated``."""
        delivered = sum(1 for record in self.records.values() if record.delivered)
        dropped = sum(1 for record in self.records.values() if record.drop_cause is not None)
        return delivered, dropped, self.generated - delivered - dropped

    def drops_by_cause(self) -> Dict[DropCause, int]:
        tally = Counter(record.drop_cause for record in self.records.values() if record.drop_cause is not None)
        return {cause: tally.get(cause, 0) for cause in DropCause}


def prr(records: Iterable[PacketRecord]) -> float:
    """Delivered over generated; in-flight packets count as not delivered."""
    records = list(records)
    if not records:
        raise ValueError("PRR is undefined when no packet was generated.")
    return sum(1 for record in records if record.delivered) / len(records)


def mean_delay(records: Iterable[PacketRecord]) -> Optional[float]:
    delays = [record.delay for record in records if record.delivered]
    if not delays:
        return None
    return math.fsum(delays) / len(delays)


@dataclass(frozen=True)
class HopStats:
    min: int
    avg: float
    max: int
    total: int
    count: int

    def __post_init__(self) -> None:
        if not self.min <= self.avg <= self.max:
            raise ValueError("hop statistics must satisfy min <= avg <= max")


def hop_stats(records: Iterable[PacketRecord]) -> Optional[HopStats]:
    hops = [record.hops for record in records if record.delivered and record.hops is not None]
    if not hops:
        return None
    return HopStats(min=min(hops), avg=sum(hops) / len(hops), max=max(hops), total=sum(hops), count=len(hops))


def pool_hop_stats(parts: Iterable[Optional[HopStats]]) -> Optional[HopStats]:
    """Combine hop statistics of several runs as if their packets were one population."""
    parts = [part for part in parts if part is not None]
    if not parts:
        return None
    total = sum(part.total for part in parts)
    count = sum(part.count for part in parts)
    return HopStats(
        min=min(part.min for part in parts),
        avg=total / count,
        max=max(part.max for part in parts),
        total=total,
        count=count,
    )


@dataclass(frozen=True)
class SummaryStat:
    mean: float
    ci95_half_width: Optional[float]
    n: int


def ci95(samples: Sequence[float]) -> SummaryStat:
    """Mean and Student-t 95% half-width; the half-width is ``None`` below two samples."""
    values = np.asarray(list(samples), dtype=float)
    n = int(values.size)
    if n == 0:
        raise ValueError("ci95 needs at least one sample")
    mean = float(values.mean())
    if n < 2:
        return SummaryStat(mean=mean, ci95_half_width=None, n=n)
    if np.all(values == values[0]):
        return SummaryStat(mean=float(values[0]), ci95_half_width=0.0, n=n)
    quantile = float(stats.t.ppf(0.975, n - 1))
    half_width = quantile * float(values.std(ddof=1)) / math.sqrt(n)
    return SummaryStat(mean=mean, ci95_half_width=half_width, n=n)


@dataclass
class RunSummary:
    """Everything one iteration contributes to the output tables."""

    strategy: str
    frequency_mhz: int
    modulation: str
    payload_bytes: int
    interval_s: float
    iteration: int
    seed: int
    generated: int
    delivered: int
    dropped: int
    in_flight: int
    prr: float
    mean_delay_s: Optional[float]
    energy_j_per_node: float
    energy_j_sensor: Optional[float]
    energy_j_coordinator: Optional[float]
    energy_j_leader: float
    energy_j_per_delivered: Optional[float]
    hops: Optional[HopStats]
    mac: Dict[str, int] = field(default_factory=dict)
    routing: Dict[str, int] = field(default_factory=dict)
    drops: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.delivered + self.dropped + self.in_flight != self.generated:
            raise ValueError("packet conservation violated: delivered + dropped + in_flight != generated")
        if not 0.0 <= self.prr <= 1.0:
            raise ValueError(f"PRR {self.prr} outside [0, 1]")

    @property
    def point_key(self) -> Tuple[str, int, str, int, float]:
        return (self.strategy, self.frequency_mhz, self.modulation, self.payload_bytes, self.interval_s)

    def to_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "strategy": self.strategy,
            "frequency_mhz": self.frequency_mhz,
            "modulation": self.modulation,
            "payload_bytes": self.payload_bytes,
            "interval_s": self.interval_s,
            "iteration": self.iteration,
            "seed": self.seed,
            "generated": self.generated,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "in_flight": self.in_flight,
            "prr": self.prr,
            "mean_delay_ms": None if self.mean_delay_s is None else self.mean_delay_s * 1000.0,
            "energy_mj_per_node": self.energy_j_per_node * 1000.0,
            "energy_mj_sensor": None if self.energy_j_sensor is None else self.energy_j_sensor * 1000.0,
            "energy_mj_coordinator": None if self.energy_j_coordinator is None else self.energy_j_coordinator * 1000.0,
            "energy_mj_leader": self.energy_j_leader * 1000.0,
            "energy_mj_per_delivered": None
            if self.energy_j_per_delivered is None
            else self.energy_j_per_delivered * 1000.0,
            "hop_min": None if self.hops is None else self.hops.min,
            "hop_avg": None if self.hops is None else self.hops.avg,
            "hop_max": None if self.hops is None else self.hops.max,
        }
        row.update({f"mac_{name}": value for name, value in self.mac.items()})
        row.update({f"routing_{name}": value for name, value in self.routing.items()})
        row.update({f"drops_{name.replace('-', '_')}": value for name, value in self.drops.items()})
        return row


def summarize_point(runs: List[RunSummary]) -> Dict[str, object]:
    """Aggregate row for one configuration point: mean and half-width per metric."""
    if not runs:
        raise ValueError("cannot aggregate an empty set of runs")
    first = runs[0]
    row: Dict[str, object] = {
        "strategy": first.strategy,
        "frequency_mhz": first.frequency_mhz,
        "modulation": first.modulation,
        "payload_bytes": first.payload_bytes,
        "interval_s": first.interval_s,
        "iterations": len(runs),
    }
    metrics = {
        "prr": [run.prr for run in runs],
        "mean_delay_ms": [run.mean_delay_s * 1000.0 for run in runs if run.mean_delay_s is not None],
        "energy_mj_per_node": [run.energy_j_per_node * 1000.0 for run in runs],
        "energy_mj_per_delivered": [
            run.energy_j_per_delivered * 1000.0 for run in runs if run.energy_j_per_delivered is not None
        ],
    }
    for name, samples in metrics.items():
        if samples:
            stat = ci95(samples)
            row[f"{name}_mean"] = stat.mean
            row[f"{name}_ci95"] = stat.ci95_half_width
        else:
            row[f"{name}_mean"] = None
            row[f"{name}_ci95"] = None
    pooled = pool_hop_stats(run.hops for run in runs)
    row["hop_min"] = None if pooled is None else pooled.min
    row["hop_avg"] = None if pooled is None else pooled.avg
    row["hop_max"] = None if pooled is None else pooled.max
    return row
