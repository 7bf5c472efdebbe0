import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import device
from powmesh.errors import IncompleteTrace, ParseError, ValidationError
from powmesh.metrics import (
    COLUMNS,
    MetricBounds,
    RunStats,
    check_bounds,
    compute_stats,
    functioning_fraction,
    load_bounds,
    mean_stats,
    throughput_of,
)
from powmesh.netmodel import BandwidthDistribution, Link, Network, generate_network
from powmesh.simcore import GENESIS, Block, EventTrace, FixedInterval, SimConfig, run

KB = 1000


def stats(stale=0.01, prop=10.0, traffic=100.0, genuine=90.0):
    return RunStats(100, 100 - genuine, genuine, stale, prop, traffic, 0.0)


@pytest.mark.parametrize(
    "genuine,size,expected,digits", [(90.5, 500 * KB, 30.17, 2), (830, 100 * KB, 55.3, 1), (10.4, 10_000 * KB, 69.3, 1)]
)
def test_throughput_table_cells(genuine, size, expected, digits):
    # compared at the precision the reference values carry
    assert round(throughput_of(genuine, size, 250, 6000), digits) == expected


def test_throughput_exact_in_runs():
    net = generate_network(30, seed=1)
    for seed in range(3):
        cfg = SimConfig(200 * KB, FixedInterval(20), duration=1200, seed=seed)
        s = compute_stats(run(net, cfg), net, cfg)
        assert s.throughput == s.genuine_blocks * (cfg.block_size / cfg.avg_tx_size) / cfg.duration
        assert s.genuine_blocks == s.total_blocks - s.stale_blocks
        assert 0 <= s.stale_rate <= 1


def hand_trace(times):
    blocks = [Block(GENESIS, -1, GENESIS, 0, 0.0, 0), Block(1, 0, GENESIS, 1, 10.0, 1000)]
    rec = [(1, i, 10.0 + t) for i, t in enumerate(times)]
    trace = EventTrace(blocks, rec, [], canonical_chain=[0, 1], device_ids=tuple(range(len(times))), duration=100.0,
                       end_time=100.0, closed=True)
    return trace


def test_percentile_oracle():
    devs = [device(0, True)] + [device(i) for i in (1, 2, 3)]
    net = Network(tuple(devs), tuple(Link(0, i, 1.0) for i in (1, 2, 3)))
    cfg = SimConfig(1000, FixedInterval(10), duration=100.0)
    s = compute_stats(hand_trace([1, 2, 3, 4]), net, cfg)
    assert s.prop_delay_90 == 4.0
    # ten devices: ceil(0.9 * 10) = 9th arrival
    devs10 = [device(0, True)] + [device(i) for i in range(1, 10)]
    net10 = Network(tuple(devs10), tuple(Link(0, i, 1.0) for i in range(1, 10)))
    s10 = compute_stats(hand_trace(list(range(1, 11))), net10, cfg)
    assert s10.prop_delay_90 == 9.0


def test_empty_trace():
    net = Network((device(0, True), device(1)), (Link(0, 1, 1.0),))
    trace = EventTrace([Block(GENESIS, -1, GENESIS, 0, 0.0, 0)], [], [], canonical_chain=[0], closed=True)
    s = compute_stats(trace, net, SimConfig(1000, FixedInterval(10)))
    assert (s.total_blocks, s.stale_blocks, s.genuine_blocks, s.stale_rate, s.prop_delay_90, s.throughput) == (0,) * 6


def test_incomplete_trace():
    net = Network((device(0, True), device(1)), (Link(0, 1, 1.0),))
    with pytest.raises(IncompleteTrace):
        compute_stats(EventTrace([], [], []), net, SimConfig(1000, FixedInterval(10)))


def test_traffic_lower_bound():
    net = generate_network(50, seed=2)
    cfg = SimConfig(500 * KB, FixedInterval(60), duration=3000, seed=2)
    s = compute_stats(run(net, cfg), net, cfg)
    n = len(net.devices)
    assert s.avg_traffic >= s.genuine_blocks * cfg.block_size * 8 * (n - 1) / (n * cfg.duration) / 1000
    min_lat = min(l.latency_ms for l in net.links) / 1000
    assert s.prop_delay_90 >= min_lat


def test_bounds_on_table_rows():
    ok = check_bounds(stats(stale=0.0171, prop=17, traffic=136), 60)
    assert ok.overall_pass
    assert ok["Decentralization"].measured == pytest.approx(17 / 60)
    bad = check_bounds(stats(stale=0.75, prop=2665, traffic=273777), 5)
    assert [bad[d].passed for d in ("Decentralization", "Efficiency", "NetworkBandwidth")] == [False] * 3
    assert not bad.overall_pass
    assert bad["Scalability"].passed is None and bad["Security"].passed is None


def test_bounds_inclusive():
    r = check_bounds(stats(stale=0.02, prop=60, traffic=250), 60)
    assert r.overall_pass
    assert r.violation() == 0


@given(
    stale=st.floats(0, 1),
    prop=st.floats(0, 1e4),
    traffic=st.floats(0, 1e6),
    worse=st.floats(0, 1e3),
    interval=st.floats(1, 1e3),
)
def test_bounds_monotone(stale, prop, traffic, worse, interval):
    base = check_bounds(stats(stale, prop, traffic), interval)
    for d, s in (
        ("Efficiency", stats(min(1.0, stale + worse), prop, traffic)),
        ("Decentralization", stats(stale, prop + worse, traffic)),
        ("NetworkBandwidth", stats(stale, prop, traffic + worse)),
    ):
        worse_report = check_bounds(s, interval)
        if not base[d].passed:
            assert not worse_report[d].passed
        if not base.overall_pass:
            assert not worse_report.overall_pass
        assert worse_report.violation() >= base.violation()


def test_bounds_validation(tmp_path):
    with pytest.raises(ValidationError):
        MetricBounds(max_stale_rate=0)
    with pytest.raises(ValidationError):
        check_bounds(stats(), 0)
    p = tmp_path / "b.json"
    p.write_text(json.dumps({"max_stale_rate": 0.01}))
    assert load_bounds(p).max_stale_rate == 0.01
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ParseError):
        load_bounds(p)


def test_functioning_fraction():
    # two devices, the regular one behind a link slower than the interval
    net = Network((device(0, True), device(1)), (Link(0, 1, 20_000.0),))
    cfg = SimConfig(1000, FixedInterval(10), duration=300, seed=0)
    trace = run(net, cfg)
    assert functioning_fraction(trace, 10) == 0.5
    fast = generate_network(40, seed=0, bw=BandwidthDistribution.constant(1e6))
    fast = Network(fast.devices, tuple(Link(l.a, l.b, 0.0) for l in fast.links))
    assert functioning_fraction(run(fast, cfg), 10) == 1.0


def test_functioning_fraction_anchor():
    fractions = []
    for seed in range(5):
        net = generate_network(250, setup="netherlands", seed=seed)
        trace = run(net, SimConfig(500 * KB, FixedInterval(60), seed=seed))
        fractions.append(functioning_fraction(trace, 60))
    assert sum(fractions) / 5 >= 0.90


def test_mean_and_record():
    m = mean_stats([stats(genuine=80), stats(genuine=100)])
    assert m.genuine_blocks == 90
    assert list(m.record()) == list(COLUMNS.values())
    with pytest.raises(ValueError):
        mean_stats([])
