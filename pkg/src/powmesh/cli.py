"""Command-line entry point: ``powmesh simulate | preset | plan | security | network``."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path
from typing import Sequence

from .errors import (
    BoundsViolation,
    Infeasible,
    InfeasibleTopology,
    NoFeasiblePair,
    NoMiners,
    ParseError,
    PowmeshError,
    ValidationError,
)
from .metrics import COLUMNS, MetricBounds, RunStats, compute_stats, load_bounds, mean_stats
from .netmodel import (
    DEFAULT_MINER_RATIO,
    BandwidthDistribution,
    Network,
    builtin_setup,
    generate_network,
    load_bandwidth,
    load_network,
)
from .planner import (
    DEFAULT_INTERVALS,
    DEFAULT_SIZES,
    generate_inventory,
    load_inventory,
    map_jobs,
    plan_document,
    plan_inventory,
)
from .security import load_scenarios, results_table, run_scenarios, table7_scenarios
from .simcore import FixedDifficulty, FixedInterval, SimConfig, run
from .units import format_interval, format_seeds, format_size, parse_interval, parse_seeds, parse_size

EXIT_OK, EXIT_INVALID, EXIT_NO_PLAN = 0, 2, 3

PARAM_COLUMNS = ["Setup", "Devices", "Miners", "BlockSize", "Interval", "Difficulty"]
STAT_COLUMNS = list(COLUMNS.values())

EVAL1_SIZES = (10_000, 50_000, 100_000, 500_000, 1_000_000, 5_000_000, 10_000_000)
EVAL_INTERVALS = (600.0, 300.0, 60.0, 30.0, 10.0, 5.0)
EVAL2_SETUPS = ("netherlands", "europe", "world")
EVAL3_LADDER = ((83, 6), (166, 12), (250, 18), (500, 36), (750, 54), (1000, 72), (1250, 90))
PRESETS = ("Eval1_BlockGrid", "Eval2_Locations", "Eval3A_FixedDifficulty", "Eval3B_FixedInterval", "Security_Table7")


# --- one grid row ----------------------------------------------------------


class Row:
    """One preset/simulate row: a network recipe plus a config recipe."""

    def __init__(self, setup, devices, miners, block_size, regime, difficulty=None, network=None, bw=None):
        self.setup = setup
        self.devices = devices
        self.miners = miners
        self.block_size = block_size
        self.regime = regime
        self.difficulty = difficulty
        self.network = network
        self.bw = bw

    @property
    def interval(self) -> float:
        if isinstance(self.regime, FixedInterval):
            return self.regime.target_interval
        return self.regime.ref_interval * self.regime.ref_miners / self.miners

    def params(self) -> list[str]:
        diff = "" if self.difficulty is None else f"{self.difficulty:g}"
        return [self.setup, str(self.devices), str(self.miners), format_size(self.block_size), format_interval(self.interval), diff]


def _run_one(args) -> RunStats:
    row, seed, duration, tx_size, contention, trace_path = args
    net = row.network
    if net is None:
        net = generate_network(row.devices, setup=row.setup, seed=seed, n_miners=row.miners, bw=row.bw)
    cfg = SimConfig(row.block_size, row.regime, duration=duration, avg_tx_size=tx_size, seed=seed, contention=contention)
    trace = run(net, cfg)
    if trace_path:
        trace.write(trace_path)
    return compute_stats(trace, net, cfg)


def _fmt_stats(s: RunStats) -> list[str]:
    out = []
    for name in COLUMNS:
        v = getattr(s, name)
        if name == "stale_rate":
            v *= 100.0
        out.append(f"{v:.2f}")
    return out


def run_rows(rows, seeds, duration, tx_size=250.0, contention="fifo", jobs=1, trace=None):
    """Return (mean stats per row, per-seed stats per row)."""
    seeds = list(seeds)
    if trace:
        Path(trace).parent.mkdir(parents=True, exist_ok=True)
    tasks = []
    for r, row in enumerate(rows):
        for seed in seeds:
            tpath = None
            if trace:
                tpath = _trace_path(trace, seed, len(seeds) > 1, r if len(rows) > 1 else None)
            tasks.append((row, seed, duration, tx_size, contention, tpath))
    flat = map_jobs(_run_one, tasks, jobs)
    per = [flat[i * len(seeds) : (i + 1) * len(seeds)] for i in range(len(rows))]
    return [mean_stats(p) for p in per], per


def _trace_path(base, seed, multi_seed, row_index) -> str:
    p = Path(base)
    tag = ""
    if row_index is not None:
        tag += f".row{row_index}"
    if multi_seed:
        tag += f".seed{seed}"
    return str(p.with_name(p.stem + tag + p.suffix)) if tag else str(p)


def rows_csv(rows, means, seeds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARAM_COLUMNS + STAT_COLUMNS + ["Seeds"])
    tag = format_seeds(seeds)
    for row, m in zip(rows, means):
        w.writerow(row.params() + _fmt_stats(m) + [tag])
    return buf.getvalue()


def seeds_csv(rows, per, seeds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARAM_COLUMNS + ["Seed"] + STAT_COLUMNS)
    for row, runs in zip(rows, per):
        for seed, s in zip(seeds, runs):
            w.writerow(row.params() + [str(seed)] + _fmt_stats(s))
    return buf.getvalue()


# --- presets ---------------------------------------------------------------


def preset_rows(name: str) -> list[Row]:
    """Rows in reference-table order."""
    if name == "Eval1_BlockGrid":
        return [
            Row("netherlands", 250, 18, size, FixedInterval(iv)) for size in EVAL1_SIZES for iv in EVAL_INTERVALS
        ]
    if name == "Eval2_Locations":
        return [Row(setup, 250, 18, 500_000, FixedInterval(iv)) for iv in EVAL_INTERVALS for setup in EVAL2_SETUPS]
    if name == "Eval3A_FixedDifficulty":
        regime = FixedDifficulty(difficulty=1.0, ref_miners=6, ref_interval=180.0)
        return [Row("netherlands", n, m, 500_000, regime, difficulty=1.0) for n, m in EVAL3_LADDER]
    if name == "Eval3B_FixedInterval":
        return [Row("netherlands", n, m, 500_000, FixedInterval(60.0), difficulty=m / 6) for n, m in EVAL3_LADDER]
    raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def _maybe_plot(csv_path: Path, enabled: bool) -> None:
    if not enabled:
        return
    try:
        from . import plotting
    except ImportError as exc:  # plotting is optional
        print(f"powmesh: plot skipped ({exc})", file=sys.stderr)
        return
    try:
        plotting.plot_csv(csv_path, csv_path.with_suffix(".png"))
    except Exception as exc:  # never let a plot failure change the outcome
        print(f"powmesh: plot skipped ({exc})", file=sys.stderr)


# --- commands --------------------------------------------------------------


def _bounds(args) -> MetricBounds:
    return load_bounds(args.bounds_file) if args.bounds_file else MetricBounds()


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_simulate(args) -> int:
    bw = load_bandwidth(args.bandwidth_file) if args.bandwidth_file else None
    if args.network:
        net = load_network(args.network)
        setup, devices, miners = net.setup_name, len(net.devices), net.n_miners
    else:
        net = None
        setup = builtin_setup(args.setup).name
        devices = args.devices
        if args.miners is not None:
            miners = args.miners
        else:
            if not 0 < args.miner_ratio < 1:
                raise ValidationError(f"--miner-ratio must be in (0, 1), got {args.miner_ratio}")
            from .netmodel import miner_count

            miners = miner_count(devices, args.miner_ratio)
    if args.difficulty is not None:
        regime = FixedDifficulty(args.difficulty, args.ref_miners, args.ref_interval)
    else:
        regime = FixedInterval(args.interval)
    if miners < 1:
        raise NoMiners("the network has no miners")
    row = Row(setup, devices, miners, args.block_size, regime, args.difficulty, network=net, bw=bw)
    seeds = args.seeds
    means, per = run_rows([row], seeds, args.duration, args.tx_size, args.contention, args.jobs, args.trace)
    _write(rows_csv([row], means, seeds), args.out)
    if args.out not in (None, "-"):
        _write(seeds_csv([row], per, seeds), _sidecar(args.out))
        _maybe_plot(Path(args.out), args.plot)
    return EXIT_OK


def _sidecar(out) -> str:
    p = Path(out)
    return str(p.with_name(p.stem + ".seeds" + p.suffix))


def cmd_preset(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{args.name}.csv"
    seeds = args.seeds
    if args.name == "Security_Table7":
        results = run_scenarios(table7_scenarios(), seeds, override=True, bounds=_bounds(args), duration=args.duration, jobs=args.jobs)
        _write(results_table(results, seeds), path)
        return EXIT_OK
    rows = preset_rows(args.name)
    means, per = run_rows(rows, seeds, args.duration, args.tx_size, args.contention, args.jobs)
    _write(rows_csv(rows, means, seeds), path)
    _write(seeds_csv(rows, per, seeds), outdir / f"{args.name}.seeds.csv")
    _maybe_plot(path, args.plot)
    return EXIT_OK


def _parse_group(text: str) -> tuple[str, int]:
    setup, _, n = text.partition(":")
    try:
        return builtin_setup(setup).name, int(n)
    except ValueError:
        raise ValidationError(f"--group expects SETUP:DEVICES, got {text!r}") from None


def cmd_plan(args) -> int:
    if args.inventory:
        inv = load_inventory(args.inventory)
    else:
        groups = [_parse_group(g) for g in args.group] or [(builtin_setup(args.setup).name, args.devices)]
        if any(n < 1 for _, n in groups):
            raise ValidationError("inventory is empty")
        inv = generate_inventory(groups, args.miner_ratio, seed=args.seed)
    plans = plan_inventory(
        inv,
        args.size_cap,
        args.seed,
        args.sizes or DEFAULT_SIZES,
        args.intervals or DEFAULT_INTERVALS,
        args.seeds,
        _bounds(args),
        duration=args.duration,
        avg_tx_size=args.tx_size,
        jobs=args.jobs,
    )
    _write(plan_document(plans), args.out)
    if not all(p.feasible for p in plans):
        bad = [str(i) for i, p in enumerate(plans) if not p.feasible]
        print(f"powmesh: no feasible (size, interval) pair for cluster(s) {', '.join(bad)}", file=sys.stderr)
        return EXIT_NO_PLAN
    return EXIT_OK


def cmd_security(args) -> int:
    scenarios = load_scenarios(args.suite) if args.suite else table7_scenarios()
    results = run_scenarios(
        scenarios, args.seeds, override=args.override, bounds=_bounds(args), duration=args.duration, jobs=args.jobs
    )
    _write(results_table(results, args.seeds), args.out)
    return EXIT_OK


def cmd_network(args) -> int:
    bw = load_bandwidth(args.bandwidth_file) if args.bandwidth_file else None
    net = generate_network(args.devices, args.miner_ratio, args.setup, bw, seed=args.seed, n_miners=args.miners)
    _write(net.to_json(), args.out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def _typed(fn, label):
    def conv(text):
        try:
            return fn(text)
        except ValidationError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    conv.__name__ = label
    return conv


def _list_of(fn, label):
    return _typed(lambda text: [fn(x) for x in text.split(",") if x.strip()], label)


def _common(p: argparse.ArgumentParser, seeds_default: str = "0..4") -> None:
    p.add_argument("--seeds", "--seed-range", dest="seeds", type=_typed(parse_seeds, "seeds"), default=parse_seeds(seeds_default), help=f"e.g. 1..5, 7 or 1,4,9 (default {seeds_default})")
    p.add_argument("--duration", type=_typed(parse_interval, "duration"), default=6000.0, help="simulated time, e.g. 100m (default 100m)")
    p.add_argument("--tx-size", type=float, default=250.0, help="average transaction size in bytes (default 250)")
    p.add_argument("--bounds-file", help="JSON file overriding the metric bounds")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="powmesh", description="PoW block propagation simulator for IoT device networks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one configuration over a seed range")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--network", help="network JSON file (default: generate one per seed)")
    src.add_argument("--setup", default="netherlands", help="netherlands | europe | world | global")
    p.add_argument("--devices", type=int, default=250)
    p.add_argument("--miner-ratio", type=float, default=DEFAULT_MINER_RATIO)
    p.add_argument("--miners", type=int, help="exact miner count (overrides --miner-ratio)")
    p.add_argument("--bandwidth-file", help="JSON bandwidth distribution")
    p.add_argument("--block-size", type=_typed(parse_size, "size"), default=500_000, help="e.g. 500KB, 1MB")
    p.add_argument("--interval", type=_typed(parse_interval, "interval"), default=60.0, help="e.g. 60s, 1m")
    p.add_argument("--difficulty", type=float, help="fixed-difficulty regime in alpha units (interval derived from miners)")
    p.add_argument("--ref-miners", type=int, default=6)
    p.add_argument("--ref-interval", type=_typed(parse_interval, "interval"), default=180.0)
    p.add_argument("--contention", choices=("fifo", "split"), default="fifo")
    p.add_argument("--out", help="CSV path (default stdout); a .seeds sidecar is written next to it")
    p.add_argument("--trace", help="JSON-lines trace path; seed-suffixed when several seeds run")
    p.add_argument("--plot", action="store_true", help="also write a PNG next to --out")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preset", help="run a named experiment grid")
    p.add_argument("name", choices=PRESETS)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--contention", choices=("fifo", "split"), default="fifo")
    p.add_argument("--plot", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("plan", help="partition an inventory and pick per-cluster parameters")
    p.add_argument("--inventory", help="inventory JSON file")
    p.add_argument("--setup", default="netherlands")
    p.add_argument("--devices", type=int, default=250)
    p.add_argument("--group", action="append", default=[], help="SETUP:DEVICES, repeatable (mixed inventory)")
    p.add_argument("--miner-ratio", type=float, default=DEFAULT_MINER_RATIO)
    p.add_argument("--seed", type=int, default=0, help="partition and inventory seed")
    p.add_argument("--size-cap", type=int, default=250)
    p.add_argument("--sizes", type=_list_of(parse_size, "sizes"), help="comma list, e.g. 100KB,500KB,1MB")
    p.add_argument("--intervals", type=_list_of(parse_interval, "intervals"), help="comma list, e.g. 5s,10s,1m")
    p.add_argument("--out", help="plan JSON path (default stdout)")
    _common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("security", help="total-work comparison of scenarios")
    p.add_argument("suite", nargs="?", help="scenario CSV (default: the six-scenario, three-size table)")
    p.add_argument("--override", action="store_true", help="keep scenarios whose own report fails the bounds")
    p.add_argument("--out", help="CSV path (default stdout)")
    _common(p)
    p.set_defaults(func=cmd_security)

    p = sub.add_parser("network", help="generate a network JSON file")
    p.add_argument("--setup", default="netherlands")
    p.add_argument("--devices", type=int, default=250)
    p.add_argument("--miner-ratio", type=float, default=DEFAULT_MINER_RATIO)
    p.add_argument("--miners", type=int)
    p.add_argument("--bandwidth-file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON path (default stdout)")
    p.set_defaults(func=cmd_network)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoFeasiblePair as exc:
        print(f"powmesh: {exc}", file=sys.stderr)
        return EXIT_NO_PLAN
    except BoundsViolation as exc:
        print(f"powmesh: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, ParseError, Infeasible, InfeasibleTopology, NoMiners) as exc:
        print(f"powmesh: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PowmeshError as exc:
        print(f"powmesh: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"powmesh: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
