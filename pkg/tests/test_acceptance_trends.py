from __future__ import annotations

import csv
import os
from collections import defaultdict

import pytest

from services.dissemination import Strategy
from services.experiment_service import PointSpec, all_runs, sweep
from services.metrics import pool_hop_stats
from services.output_writers import UNDEFINED, write_runs_csv
from services.phy_channel import Modulation

pytestmark = pytest.mark.slow

PAYLOADS = [16, 32, 64, 128, 256, 512, 1024]
BANDS = [900, 2450]


@pytest.fixture(scope="module")
def runs_by_config():
    """Default sweep grid, 10 iterations of 60 s per point, grouped by (strategy, band, modulation)."""
    results = sweep(
        PointSpec(duration_s=60.0, iterations=10),
        {
            "strategy": [Strategy.CLUSTERED, Strategy.DISTRIBUTED],
            "frequency_mhz": BANDS,
            "modulation": [Modulation.DBPSK, Modulation.DQPSK],
            "payload_bytes": PAYLOADS,
        },
        workers=os.cpu_count() or 1,
        progress=False,
    )
    grouped = defaultdict(lambda: defaultdict(list))
    for run in all_runs(results):
        grouped[(run.strategy, run.frequency_mhz, run.modulation)][run.payload_bytes].append(run)
    return grouped


def _key(strategy: Strategy, band: int, modulation: Modulation):
    return (strategy.value, band, modulation.value)


def _mean_prr(runs) -> float:
    return sum(run.prr for run in runs) / len(runs)


def _mean_delay(runs) -> float:
    delays = [run.mean_delay_s for run in runs if run.mean_delay_s is not None]
    assert delays, "no packet delivered at this point"
    return sum(delays) / len(delays)


def _pooled_hops(by_payload):
    pooled = pool_hop_stats(run.hops for runs in by_payload.values() for run in runs)
    assert pooled is not None
    return pooled


TREND_CONFIGS = [
    (strategy, band, Modulation.DQPSK) for strategy in (Strategy.CLUSTERED, Strategy.DISTRIBUTED) for band in BANDS
] + [(Strategy.CLUSTERED, band, Modulation.DBPSK) for band in BANDS]


@pytest.mark.parametrize("strategy,band,modulation", TREND_CONFIGS)
def test_prr_does_not_grow_with_payload(runs_by_config, strategy, band, modulation):
    by_payload = runs_by_config[_key(strategy, band, modulation)]
    means = [_mean_prr(by_payload[payload]) for payload in PAYLOADS]
    rises = [later - earlier for earlier, later in zip(means, means[1:]) if later > earlier]
    assert len(rises) <= 1, means
    assert all(rise <= 0.02 for rise in rises), means


def test_distributed_dbpsk_900_saturates(runs_by_config, tmp_path):
    runs = runs_by_config[_key(Strategy.DISTRIBUTED, 900, Modulation.DBPSK)][256]
    assert _mean_prr(runs) < 0.20

    path = write_runs_csv(tmp_path / "runs.csv", runs)
    with path.open(encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        if int(row["delivered"]) == 0:
            assert row["mean_delay_ms"] == UNDEFINED


def test_clustered_dqpsk_2450_small_payload_quality(runs_by_config):
    runs = runs_by_config[_key(Strategy.CLUSTERED, 2450, Modulation.DQPSK)][16]
    assert _mean_prr(runs) >= 0.85


@pytest.mark.parametrize("band", BANDS)
def test_clustering_shortens_dqpsk_routes(runs_by_config, band):
    clustered = _pooled_hops(runs_by_config[_key(Strategy.CLUSTERED, band, Modulation.DQPSK)])
    distributed = _pooled_hops(runs_by_config[_key(Strategy.DISTRIBUTED, band, Modulation.DQPSK)])
    assert clustered.avg < distributed.avg


@pytest.mark.parametrize("band", BANDS)
def test_clustered_dbpsk_delivers_over_shorter_routes(runs_by_config, band):
    dbpsk = _pooled_hops(runs_by_config[_key(Strategy.CLUSTERED, band, Modulation.DBPSK)])
    dqpsk = _pooled_hops(runs_by_config[_key(Strategy.CLUSTERED, band, Modulation.DQPSK)])
    assert dbpsk.avg < dqpsk.avg


def test_hop_bounds_hold_everywhere(runs_by_config):
    for key, by_payload in runs_by_config.items():
        pooled = pool_hop_stats(run.hops for runs in by_payload.values() for run in runs)
        if pooled is None:
            continue
        assert pooled.min == 1, key
        assert pooled.max <= 8, key


@pytest.mark.parametrize("band", BANDS)
@pytest.mark.parametrize("payload", [16, 32, 64])
def test_small_dqpsk_packets_arrive_quickly(runs_by_config, band, payload):
    clustered = _mean_delay(runs_by_config[_key(Strategy.CLUSTERED, band, Modulation.DQPSK)][payload])
    distributed = _mean_delay(runs_by_config[_key(Strategy.DISTRIBUTED, band, Modulation.DQPSK)][payload])
    assert clustered < 0.050
    assert distributed < 0.050
    assert distributed <= clustered
