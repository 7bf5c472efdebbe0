"""Partition device inventories into sub-blockchains and pick per-chain parameters."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import Infeasible, NoFeasiblePair, ParseError, ValidationError
from .metrics import COLUMNS, MetricBounds, MetricReport, RunStats, check_bounds, compute_stats, mean_stats
from .netmodel import (
    DEFAULT_MINER_RATIO,
    INTRA_CITY_FLOOR_MS,
    BandwidthDistribution,
    DegreeProfile,
    DeviceSpec,
    LatencyMatrix,
    Network,
    build_network,
    builtin_setup,
    device_from_dict,
    device_to_dict,
    load_latency_matrix,
    make_devices,
    miner_count,
)
from .simcore import FixedInterval, SimConfig, run

MAX_BLOCK_SIZE = 1_000_000
DEFAULT_SIZES = (100_000, 500_000, 1_000_000)
DEFAULT_INTERVALS = (5.0, 10.0, 30.0, 60.0, 300.0, 600.0)
MINER_FRACTION_RANGE = (0.05, 0.09)


@dataclass(frozen=True)
class Inventory:
    devices: tuple[DeviceSpec, ...]
    latency: LatencyMatrix

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.devices:
            raise ValidationError("inventory is empty")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ValidationError("inventory has duplicate device ids")
        known = set(self.latency.cities)
        for d in self.devices:
            if d.city not in known:
                raise ValidationError(f"device {d.id}: city {d.city!r} is not in latency matrix {self.latency.name!r}")

    @property
    def n_miners(self) -> int:
        return sum(1 for d in self.devices if d.is_miner)

    def to_dict(self) -> dict:
        return {
            "setup": self.latency.name,
            "devices": [device_to_dict(d) for d in self.devices],
        }


def inventory_from_dict(data: dict, base_dir=None) -> Inventory:
    """``setup`` names a built-in matrix; ``latency_file`` points at a CSV instead."""
    from pathlib import Path

    try:
        if "latency_file" in data:
            path = Path(data["latency_file"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            latency = load_latency_matrix(path)
        else:
            latency = builtin_setup(data.get("setup", "netherlands"))
        devices = [device_from_dict(d) for d in data["devices"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"inventory: missing or malformed field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, (ParseError, ValidationError)):
            raise
        raise ParseError(f"inventory: {exc}") from exc
    return Inventory(tuple(devices), latency)


def load_inventory(path) -> Inventory:
    from pathlib import Path

    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return inventory_from_dict(data, Path(path).parent)


def generate_inventory(
    parts: Sequence[tuple[str, int]],
    miner_ratio: float = DEFAULT_MINER_RATIO,
    bw: BandwidthDistribution | None = None,
    seed: int = 0,
) -> Inventory:
    """Inventory made of ``(setup, n_devices)`` groups.

    One group uses that setup's matrix; several groups share the built-in
    ``global`` matrix, which covers every built-in city.
    """
    if not parts:
        raise ValidationError("need at least one (setup, devices) group")
    latency = builtin_setup(parts[0][0]) if len(parts) == 1 else builtin_setup("global")
    devices: list[DeviceSpec] = []
    for g, (setup, n) in enumerate(parts):
        cities = builtin_setup(setup).cities
        group = make_devices(n, miner_count(n, miner_ratio), cities, bw or BandwidthDistribution(), seed + 1000 * g)
        offset = len(devices)
        devices.extend(
            DeviceSpec(d.id + offset, d.role, d.arch_role, d.city, d.download_bw, d.upload_bw, d.mining_power)
            for d in group
        )
    return Inventory(tuple(devices), latency)


# --- partitioning ----------------------------------------------------------


def device_distances(inv: Inventory, floor_ms: float = INTRA_CITY_FLOOR_MS) -> np.ndarray:
    """Pairwise device latency (ms); co-located devices sit ``floor_ms`` apart."""
    m = np.array(inv.latency.latency_ms, dtype=float)
    np.fill_diagonal(m, floor_ms)
    idx = np.array([inv.latency.index(d.city) for d in inv.devices])
    d = m[np.ix_(idx, idx)]
    np.fill_diagonal(d, 0.0)
    return d


def _assign(dist: np.ndarray, medoids: list[int], cap: int) -> np.ndarray:
    # greedy capacitated assignment: cheapest (device, medoid) pairs first
    n = dist.shape[0]
    sub = dist[:, medoids]
    order = np.lexsort((np.tile(np.arange(len(medoids)), n), np.repeat(np.arange(n), len(medoids)), sub.ravel()))
    labels = np.full(n, -1)
    load = [0] * len(medoids)
    left = n
    for flat in order:
        i, c = divmod(int(flat), len(medoids))
        if labels[i] >= 0 or load[c] >= cap:
            continue
        labels[i] = c
        load[c] += 1
        left -= 1
        if not left:
            break
    return labels


def _medoid(dist: np.ndarray, members: np.ndarray) -> int:
    costs = dist[np.ix_(members, members)].sum(axis=1)
    return int(members[int(np.argmin(costs))])


def _balance_miners(dist, labels, medoids, is_miner, lo, hi) -> None:
    k = len(medoids)
    for _ in range(len(labels)):
        size = np.bincount(labels, minlength=k)
        miners = np.bincount(labels[is_miner], minlength=k)
        frac = miners / np.maximum(size, 1)
        if all(miners[c] > 0 and lo <= frac[c] <= hi for c in range(k)):
            return
        donors = [c for c in range(k) if miners[c] >= 2]
        if not donors:
            return
        recv = int(np.argmin(frac))
        donor = max(donors, key=lambda c: (frac[c], -c))
        if donor == recv:
            return
        if miners[recv] > 0 and (miners[donor] - 1) / size[donor] < (miners[recv] + 1) / size[recv]:
            return  # one more swap would only flip the imbalance
        md, mr = medoids[donor], medoids[recv]
        cand_m = np.flatnonzero((labels == donor) & is_miner)
        cand_r = np.flatnonzero((labels == recv) & ~is_miner)
        if not len(cand_r):
            return
        m = int(cand_m[np.argmin(dist[cand_m, mr] - dist[cand_m, md])])
        r = int(cand_r[np.argmin(dist[cand_r, md] - dist[cand_r, mr])])
        labels[m], labels[r] = recv, donor


def partition(
    inv: Inventory,
    size_cap: int = 250,
    seed: int = 0,
    affinity: np.ndarray | None = None,
    max_iter: int = 100,
) -> list[frozenset[int]]:
    """Split ``inv`` into latency-coherent clusters of at most ``size_cap`` devices.

    k-medoids with farthest-first seeding and capacity-respecting assignment;
    afterwards miners and regular devices are swapped pairwise so every cluster
    keeps at least one miner and, where the totals allow, a miner share inside
    ``MINER_FRACTION_RANGE``.  ``affinity`` (n x n, non-negative, higher = talks
    more) shrinks distances between frequently communicating devices.
    """
    if size_cap < 2:
        raise ValidationError(f"size_cap must be >= 2, got {size_cap}")
    n = len(inv.devices)
    k = math.ceil(n / size_cap)
    is_miner = np.array([d.is_miner for d in inv.devices])
    if int(is_miner.sum()) < k:
        raise Infeasible(f"{int(is_miner.sum())} miners cannot cover {k} clusters of at most {size_cap} devices")
    dist = device_distances(inv)
    if affinity is not None:
        aff = np.asarray(affinity, dtype=float)
        if aff.shape != dist.shape or (aff < 0).any():
            raise ValidationError(f"affinity must be a non-negative {n}x{n} matrix")
        dist = dist / (1.0 + aff)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    medoids = [int(rng.integers(n))]
    nearest = dist[medoids[0]].copy()
    while len(medoids) < k:
        nxt = int(np.argmax(nearest))
        medoids.append(nxt)
        nearest = np.minimum(nearest, dist[nxt])

    labels = _assign(dist, medoids, size_cap)
    for _ in range(max_iter):
        new = [_medoid(dist, np.flatnonzero(labels == c)) for c in range(k)]
        if new == medoids:
            break
        medoids = new
        labels = _assign(dist, medoids, size_cap)

    _balance_miners(dist, labels, medoids, is_miner, *MINER_FRACTION_RANGE)
    ids = np.array([d.id for d in inv.devices])
    clusters = [frozenset(int(x) for x in ids[labels == c]) for c in range(k)]
    return sorted((c for c in clusters if c), key=min)


def mean_intra_latency(inv: Inventory, clusters: Iterable[frozenset[int]]) -> tuple[float, float]:
    """Mean pairwise latency inside clusters and across clusters."""
    dist = device_distances(inv)
    pos = {d.id: i for i, d in enumerate(inv.devices)}
    label = np.empty(len(inv.devices), dtype=int)
    for c, members in enumerate(clusters):
        for m in members:
            label[pos[m]] = c
    same = label[:, None] == label[None, :]
    off = ~np.eye(len(label), dtype=bool)
    inside = dist[same & off]
    across = dist[~same]
    return (float(inside.mean()) if inside.size else 0.0, float(across.mean()) if across.size else 0.0)


# --- parameter search ------------------------------------------------------


@dataclass(frozen=True)
class GridCell:
    block_size: int
    interval: float
    stats: RunStats
    report: MetricReport
    per_seed: tuple[RunStats, ...] = ()

    def to_dict(self) -> dict:
        return {
            "block_size": self.block_size,
            "interval": self.interval,
            "pass": self.report.overall_pass,
            "violation": self.report.violation(),
            **self.stats.record(),
        }


@dataclass(frozen=True)
class SubchainPlan:
    member_ids: frozenset[int]
    chosen_block_size: int
    chosen_interval: float
    predicted_stats: RunStats
    report: MetricReport
    grid: tuple[GridCell, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "member_ids", frozenset(self.member_ids))
        if self.chosen_block_size > MAX_BLOCK_SIZE:
            raise ValidationError(f"block size {self.chosen_block_size} exceeds {MAX_BLOCK_SIZE} bytes")

    @property
    def feasible(self) -> bool:
        return self.report.overall_pass

    def to_dict(self) -> dict:
        return {
            "members": sorted(self.member_ids),
            "devices": len(self.member_ids),
            "block_size": self.chosen_block_size,
            "interval": self.chosen_interval,
            "feasible": self.feasible,
            "predicted": self.predicted_stats.record(),
            "report": self.report.to_dict(),
            "grid": [c.to_dict() for c in self.grid],
        }


def _simulate_cell(args) -> RunStats:
    network, size, interval, seed, duration, tx_size, contention = args
    cfg = SimConfig(size, FixedInterval(interval), duration=duration, avg_tx_size=tx_size, seed=seed, contention=contention)
    return compute_stats(run(network, cfg), network, cfg)


def map_jobs(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


def evaluate_grid(
    cluster: Network,
    sizes: Sequence[int],
    intervals: Sequence[float],
    seeds: Sequence[int],
    bounds: MetricBounds | None = None,
    *,
    duration: float = 6000.0,
    avg_tx_size: float = 250.0,
    contention: str = "fifo",
    jobs: int = 1,
) -> list[GridCell]:
    """Seed-mean stats and report for every (size, interval) pair, in size-major order."""
    pairs = [(int(s), float(i)) for s in sizes for i in intervals]
    seeds = list(seeds)
    jobs_list = [(cluster, s, i, seed, duration, avg_tx_size, contention) for s, i in pairs for seed in seeds]
    results = map_jobs(_simulate_cell, jobs_list, jobs)
    cells = []
    for p, (size, interval) in enumerate(pairs):
        runs = tuple(results[p * len(seeds) : (p + 1) * len(seeds)])
        stats = mean_stats(runs)
        report = check_bounds(stats, interval, bounds, n_devices=len(cluster.devices))
        cells.append(GridCell(size, interval, stats, report, runs))
    return cells


def select(cells: Sequence[GridCell]) -> GridCell | None:
    """Highest mean throughput among passing cells; ties go to the shorter interval, then the smaller size."""
    ok = [c for c in cells if c.report.overall_pass]
    if not ok:
        return None
    return min(ok, key=lambda c: (-c.stats.throughput, c.interval, c.block_size))


def search_parameters(
    cluster: Network,
    candidates_size: Sequence[int] = DEFAULT_SIZES,
    candidates_interval: Sequence[float] = DEFAULT_INTERVALS,
    seeds: Sequence[int] = range(5),
    bounds: MetricBounds | None = None,
    *,
    duration: float = 6000.0,
    avg_tx_size: float = 250.0,
    contention: str = "fifo",
    jobs: int = 1,
) -> SubchainPlan:
    sizes, intervals, seeds = list(candidates_size), list(candidates_interval), list(seeds)
    if not sizes or not intervals or not seeds:
        raise ValidationError("candidate sizes, intervals and seeds must all be nonempty")
    big = [s for s in sizes if s > MAX_BLOCK_SIZE]
    if big:
        raise ValidationError(f"candidate block sizes above {MAX_BLOCK_SIZE} bytes are not allowed: {big}")
    if min(sizes) <= 0 or min(intervals) <= 0:
        raise ValidationError("candidate sizes and intervals must be positive")
    b = bounds or MetricBounds()
    cells = evaluate_grid(
        cluster, sizes, intervals, seeds, b, duration=duration, avg_tx_size=avg_tx_size, contention=contention, jobs=jobs
    )
    members = frozenset(d.id for d in cluster.devices)
    best = select(cells)
    if best is not None:
        assert best.stats.stale_rate <= b.max_stale_rate
        return SubchainPlan(members, best.block_size, best.interval, best.stats, best.report, tuple(cells))
    worst_case = min(cells, key=lambda c: (c.report.violation(), -c.stats.throughput, c.interval, c.block_size))
    plan = SubchainPlan(
        members, worst_case.block_size, worst_case.interval, worst_case.stats, worst_case.report, tuple(cells)
    )
    failing = ", ".join(e.dimension for e in worst_case.report.entries if e.passed is False)
    raise NoFeasiblePair(
        f"no (size, interval) pair passes the bounds; least violating is "
        f"{worst_case.block_size} B / {worst_case.interval:g} s failing {failing}",
        plan,
        cells,
    )


def plan_inventory(
    inv: Inventory,
    size_cap: int = 250,
    seed: int = 0,
    candidates_size: Sequence[int] = DEFAULT_SIZES,
    candidates_interval: Sequence[float] = DEFAULT_INTERVALS,
    seeds: Sequence[int] = range(5),
    bounds: MetricBounds | None = None,
    *,
    degree_profile: DegreeProfile | None = None,
    duration: float = 6000.0,
    avg_tx_size: float = 250.0,
    jobs: int = 1,
) -> list[SubchainPlan]:
    """Partition, wire each cluster and search its parameters.

    Infeasible clusters come back as plans with ``feasible == False`` rather
    than raising, so a caller can report every cluster.
    """
    by_id = {d.id: d for d in inv.devices}
    plans = []
    for c, members in enumerate(partition(inv, size_cap, seed)):
        devices = [by_id[i] for i in sorted(members)]
        net = build_network(devices, inv.latency, degree_profile, seed + c, setup_name=inv.latency.name)
        try:
            plan = search_parameters(
                net,
                candidates_size,
                candidates_interval,
                seeds,
                bounds,
                duration=duration,
                avg_tx_size=avg_tx_size,
                jobs=jobs,
            )
        except NoFeasiblePair as exc:
            plan = exc.plan
        plans.append(plan)
    return plans


def plan_document(plans: Sequence[SubchainPlan]) -> str:
    doc = {
        "columns": list(COLUMNS.values()),
        "clusters": [dict(cluster=i, **p.to_dict()) for i, p in enumerate(plans)],
        "feasible": all(p.feasible for p in plans),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
