"""Total-work comparison of sub-blockchain configurations."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from typing import Sequence

from .errors import BoundsViolation, ParseError, ValidationError
from .metrics import MetricBounds, MetricReport, RunStats, check_bounds, compute_stats, mean_stats
from .netmodel import DegreeProfile, builtin_setup, generate_network
from .planner import map_jobs
from .simcore import FixedInterval, SimConfig, run
from .units import format_interval, format_seeds, format_size, parse_interval, parse_size


@dataclass(frozen=True)
class Scenario:
    label: str
    n_devices: int
    n_miners: int
    setup: str
    difficulty: float  # alpha units
    block_size: int
    interval: float

    def __post_init__(self):
        if not self.label:
            raise ValidationError("scenario label must be nonempty")
        if not 1 <= self.n_miners <= self.n_devices:
            raise ValidationError(f"{self.label}: need 1 <= n_miners <= n_devices, got {self.n_miners}/{self.n_devices}")
        if not self.difficulty > 0:
            raise ValidationError(f"{self.label}: difficulty must be positive, got {self.difficulty}")
        if self.block_size <= 0 or not self.interval > 0:
            raise ValidationError(f"{self.label}: block size and interval must be positive")
        builtin_setup(self.setup)  # fail early on unknown setups


@dataclass(frozen=True)
class WorkResult:
    label: str
    genuine_blocks: float
    stale_rate: float
    total_work: float
    scenario: Scenario
    report: MetricReport | None = None

    @property
    def compliant(self) -> bool | None:
        return None if self.report is None else self.report.overall_pass


def total_work(genuine: float, difficulty: float) -> float:
    if genuine < 0:
        raise ValidationError(f"genuine block count must be >= 0, got {genuine}")
    if not difficulty > 0:
        raise ValidationError(f"difficulty must be positive, got {difficulty}")
    return genuine * difficulty


def _scenario_run(args) -> RunStats:
    sc, seed, duration, profile = args
    net = generate_network(sc.n_devices, setup=sc.setup, seed=seed, n_miners=sc.n_miners, degree_profile=profile)
    cfg = SimConfig(sc.block_size, FixedInterval(sc.interval), duration=duration, seed=seed)
    return compute_stats(run(net, cfg), net, cfg)


def run_scenarios(
    scenarios: Sequence[Scenario],
    seeds: Sequence[int],
    *,
    override: bool = False,
    bounds: MetricBounds | None = None,
    duration: float = 6000.0,
    degree_profile: DegreeProfile | None = None,
    jobs: int = 1,
) -> list[WorkResult]:
    """Seed-mean total work per scenario, in input order.

    Every scenario's own seed-mean report must pass the bounds; otherwise
    ``BoundsViolation`` is raised unless ``override`` is set, in which case the
    failing report is kept on the result.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValidationError("need at least one seed")
    tasks = [(sc, seed, duration, degree_profile) for sc in scenarios for seed in seeds]
    runs = map_jobs(_scenario_run, tasks, jobs)
    out = []
    for i, sc in enumerate(scenarios):
        stats = mean_stats(runs[i * len(seeds) : (i + 1) * len(seeds)])
        report = check_bounds(stats, sc.interval, bounds, n_devices=sc.n_devices, difficulty=sc.difficulty)
        if not report.overall_pass and not override:
            failing = ", ".join(e.dimension for e in report.entries if e.passed is False)
            raise BoundsViolation(
                f"scenario {sc.label!r} ({format_size(sc.block_size)}, {format_interval(sc.interval)}) fails {failing}",
                report,
            )
        out.append(WorkResult(sc.label, stats.genuine_blocks, stats.stale_rate, total_work(stats.genuine_blocks, sc.difficulty), sc, report))
    return out


# Six sub-blockchain setups at three block sizes, with fixed per-tier
# intervals.  Rows IV-VI have not been re-derived by a parameter search.
_BASE = (
    ("I", 83, 6, "netherlands", 1.0),
    ("II", 166, 12, "netherlands", 2.0),
    ("III", 250, 18, "netherlands", 3.0),
    ("IV", 500, 36, "world", 6.0),
    ("V", 1000, 72, "world", 12.0),
    ("VI", 2000, 144, "world", 24.0),
)
_TABLE7_INTERVALS = {
    100_000: (30, 35, 40, 360, 420, 600),
    500_000: (50, 55, 60, 600, 660, 720),
    1_000_000: (150, 165, 180, 600, 720, 780),
}
UNVERIFIED_LABELS = ("IV", "V", "VI")


def table7_scenarios(sizes: Sequence[int] | None = None) -> list[Scenario]:
    rows = []
    for size in sizes or _TABLE7_INTERVALS:
        for (label, n, m, setup, diff), iv in zip(_BASE, _TABLE7_INTERVALS[size]):
            rows.append(Scenario(label, n, m, setup, diff, size, float(iv)))
    return rows


SUITE_FIELDS = [f.name for f in fields(Scenario)]


def load_scenarios(path) -> list[Scenario]:
    """CSV suite: one scenario per row with the ``Scenario`` field names as header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    out = []
    for line, row in enumerate(rows, start=2):
        missing = [k for k in SUITE_FIELDS if not (row.get(k) or "").strip()]
        if missing:
            raise ParseError(f"{path}:{line}: missing field(s) {', '.join(missing)}")
        try:
            out.append(
                Scenario(
                    label=row["label"].strip(),
                    n_devices=int(row["n_devices"]),
                    n_miners=int(row["n_miners"]),
                    setup=row["setup"].strip(),
                    difficulty=float(row["difficulty"]),
                    block_size=parse_size(row["block_size"].strip()),
                    interval=parse_interval(row["interval"].strip()),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
        except ValueError as exc:
            raise ParseError(f"{path}:{line}: {exc}") from None
    if not out:
        raise ParseError(f"{path}: no scenarios")
    return out


def write_scenarios(scenarios: Sequence[Scenario], fh) -> None:
    w = csv.DictWriter(fh, SUITE_FIELDS, lineterminator="\n")
    w.writeheader()
    for sc in scenarios:
        w.writerow(asdict(sc))


TABLE_COLUMNS = ["BlockSize", "Scenario", "Difficulty", "Interval", "GenuineBlocks", "StaleRate", "TotalPoW", "Compliant", "Seeds"]


def results_table(results: Sequence[WorkResult], seeds: Sequence[int]) -> str:
    """CSV with one row per scenario; stale rate in percent, two decimals."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    tag = format_seeds(seeds)
    for r in results:
        sc = r.scenario
        w.writerow(
            [
                format_size(sc.block_size),
                r.label,
                f"{sc.difficulty:g}",
                format_interval(sc.interval),
                f"{r.genuine_blocks:.2f}",
                f"{100 * r.stale_rate:.2f}",
                f"{r.total_work:.2f}",
                "" if r.compliant is None else ("yes" if r.compliant else "no"),
                tag,
            ]
        )
    return buf.getvalue()
