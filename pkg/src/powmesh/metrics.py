"""Run statistics and the five integration-metric dimensions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

from .errors import ValidationError
from .netmodel import Network
from .simcore import GENESIS, EventTrace, SimConfig, finalize_chain

# field name -> serialized column name
COLUMNS = {
    "total_blocks": "TotalBlocks",
    "stale_blocks": "StaleBlocks",
    "genuine_blocks": "GenuineBlocks",
    "stale_rate": "StaleRate",
    "prop_delay_90": "PropDelay90s",
    "avg_traffic": "AvgTrafficKbps",
    "throughput": "ThroughputTxs",
}


@dataclass(frozen=True)
class RunStats:
    total_blocks: float
    stale_blocks: float
    genuine_blocks: float
    stale_rate: float
    prop_delay_90: float  # seconds
    avg_traffic: float  # Kbps per device
    throughput: float  # tx/s
    blocks_in_forks: float = 0.0

    def record(self) -> dict:
        return {col: getattr(self, name) for name, col in COLUMNS.items()}


def throughput_of(genuine: float, block_size: float, avg_tx_size: float, duration: float) -> float:
    return genuine * (block_size / avg_tx_size) / duration


def _percentile_time(times: list[float], n_devices: int, fraction: float = 0.9) -> float | None:
    k = math.ceil(fraction * n_devices - 1e-9)
    if k < 1:
        return min(times) if times else None
    if len(times) < k:
        return None
    return sorted(times)[k - 1]


def _reception_index(trace: EventTrace) -> dict[int, list[float]]:
    idx: dict[int, list[float]] = {}
    for blk, _dev, t in trace.receptions:
        idx.setdefault(blk, []).append(t)
    return idx


def compute_stats(trace: EventTrace, network: Network, config: SimConfig) -> RunStats:
    trace.require_closed()
    canonical, stale, _ = finalize_chain(trace)
    mined = [b for b in trace.blocks if b.id != GENESIS]
    total = len(mined)
    genuine_ids = [b for b in canonical if b != GENESIS]
    genuine = len(genuine_ids)
    n = len(network.devices)

    by_id = {b.id: b for b in trace.blocks}
    times = _reception_index(trace)
    delays = []
    for bid in genuine_ids:
        t90 = _percentile_time(times.get(bid, []), n)
        if t90 is None:
            t90 = trace.end_time
        delays.append(t90 - by_id[bid].mined_at)
    prop = sum(delays) / len(delays) if delays else 0.0

    moved = sum(tr[5] for tr in trace.transfers)
    traffic = (2 * moved) * 8 / (n * config.duration) / 1000.0

    children: dict[int, int] = {}
    for b in mined:
        children[b.parent_id] = children.get(b.parent_id, 0) + 1
    in_forks = sum(1 for b in mined if children[b.parent_id] >= 2)

    return RunStats(
        total_blocks=total,
        stale_blocks=len(stale),
        genuine_blocks=genuine,
        stale_rate=len(stale) / total if total else 0.0,
        prop_delay_90=prop,
        avg_traffic=traffic,
        throughput=throughput_of(genuine, config.block_size, config.avg_tx_size, config.duration),
        blocks_in_forks=in_forks,
    )


def mean_stats(runs: Sequence[RunStats]) -> RunStats:
    """Field-wise arithmetic mean across seeds."""
    if not runs:
        raise ValueError("mean_stats needs at least one run")
    k = len(runs)
    return RunStats(**{f.name: sum(getattr(r, f.name) for r in runs) / k for f in fields(RunStats)})


def functioning_fraction(trace: EventTrace, interval: float, n_devices: int | None = None) -> float:
    """Share of devices that receive each genuine block within one interval, averaged over blocks."""
    trace.require_closed()
    n = n_devices or len(trace.device_ids)
    by_id = {b.id: b for b in trace.blocks}
    times = _reception_index(trace)
    genuine = [b for b in trace.canonical_chain if b != GENESIS]
    if not genuine or not n:
        return 1.0
    fractions = []
    for bid in genuine:
        t0 = by_id[bid].mined_at
        fractions.append(sum(1 for t in times.get(bid, []) if t - t0 <= interval) / n)
    return sum(fractions) / len(fractions)


@dataclass(frozen=True)
class MetricBounds:
    max_stale_rate: float = 0.02
    max_avg_traffic: float = 250.0
    decentralization_ratio_max: float = 1.0
    min_functioning_fraction: float = 0.90

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValidationError(f"bound {f.name} must be positive")


@dataclass(frozen=True)
class MetricEntry:
    dimension: str
    measured: float
    bound: float | None
    passed: bool | None  # None for reported-only dimensions
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MetricReport:
    entries: tuple[MetricEntry, ...]

    @property
    def overall_pass(self) -> bool:
        return all(e.passed for e in self.entries if e.passed is not None)

    def __getitem__(self, dimension: str) -> MetricEntry:
        for e in self.entries:
            if e.dimension == dimension:
                return e
        raise KeyError(dimension)

    def violation(self) -> float:
        """Sum of relative overshoots across bounded dimensions (0 when passing)."""
        total = 0.0
        for e in self.entries:
            if e.passed is None:
                continue
            total += max(0.0, e.measured / e.bound - 1.0) if e.bound else 0.0
        return total

    def to_dict(self) -> dict:
        return {
            "overall_pass": self.overall_pass,
            "entries": [
                {"dimension": e.dimension, "measured": e.measured, "bound": e.bound, "pass": e.passed, **e.detail}
                for e in self.entries
            ],
        }


def check_bounds(
    stats: RunStats,
    interval: float,
    bounds: MetricBounds | None = None,
    *,
    n_devices: int | None = None,
    difficulty: float | None = None,
) -> MetricReport:
    if not interval > 0:
        raise ValidationError(f"interval must be > 0, got {interval}")
    b = bounds or MetricBounds()
    ratio = stats.prop_delay_90 / interval
    security_detail = {"genuine_blocks": stats.genuine_blocks}
    if difficulty is not None:
        security_detail["total_work"] = stats.genuine_blocks * difficulty
    return MetricReport(
        (
            MetricEntry("Scalability", stats.throughput, None, None, {"devices": n_devices}),
            MetricEntry("Security", stats.genuine_blocks, None, None, security_detail),
            MetricEntry(
                "Decentralization",
                ratio,
                b.decentralization_ratio_max,
                ratio <= b.decentralization_ratio_max,
                {"prop_delay_90": stats.prop_delay_90, "interval": interval},
            ),
            MetricEntry("Efficiency", stats.stale_rate, b.max_stale_rate, stats.stale_rate <= b.max_stale_rate),
            MetricEntry(
                "NetworkBandwidth", stats.avg_traffic, b.max_avg_traffic, stats.avg_traffic <= b.max_avg_traffic
            ),
        )
    )


def load_bounds(path) -> MetricBounds:
    import json

    from .errors import ParseError

    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return MetricBounds(**data)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
