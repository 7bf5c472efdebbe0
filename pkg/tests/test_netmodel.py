import json
import math
import shutil

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from powmesh.errors import InfeasibleTopology, ParseError, ValidationError
from powmesh.netmodel import (
    BandwidthDistribution,
    DegreeProfile,
    DirectionSpec,
    Network,
    Role,
    builtin_setup,
    city_populations,
    data_dir,
    generate_network,
    load_bandwidth,
    load_latency_matrix,
    load_network,
    make_devices,
    miner_count,
)


def write_matrix(path, cities, rows):
    lines = ["city," + ",".join(cities)]
    for c, row in zip(cities, rows):
        lines.append(c + "," + ",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


# --- latency ---------------------------------------------------------------


def test_builtin_setups_ordered_by_mean_latency():
    nl, eu, world = (builtin_setup(s) for s in ("netherlands", "europe", "world"))
    assert len(nl.cities) == 6
    assert nl.mean_pairwise() < eu.mean_pairwise() < world.mean_pairwise()


def test_intra_city_floor():
    nl = builtin_setup("nl")
    c = nl.cities[0]
    assert nl.latency_ms[0, 0] == 0.0
    assert nl.between(c, c) == 1.0
    assert nl.between(c, c, floor_ms=0.0) == 0.0


def test_hand_written_matrix_round_trip(tmp_path):
    p = write_matrix(tmp_path / "m.csv", ["A", "B", "C"], [[0, 12.5, 30], [12.5, 0, 7], [30, 7, 0]])
    m = load_latency_matrix(p)
    assert m.between("A", "B") == 12.5
    assert m.between("C", "B") == 7.0
    out = tmp_path / "again.csv"
    m.write_csv(out)
    again = load_latency_matrix(out)
    assert again.cities == m.cities
    assert np.array_equal(again.latency_ms, m.latency_ms)


def test_asymmetric_matrix_names_cell(tmp_path):
    p = write_matrix(tmp_path / "m.csv", ["A", "B"], [[0, 5], [6, 0]])
    with pytest.raises(ValidationError, match=r"\(A, B\)"):
        load_latency_matrix(p)


def test_negative_entry_rejected(tmp_path):
    p = write_matrix(tmp_path / "m.csv", ["A", "B"], [[0, -1], [-1, 0]])
    with pytest.raises(ValidationError, match="invalid latency"):
        load_latency_matrix(p)


def test_malformed_cell_names_cell(tmp_path):
    p = write_matrix(tmp_path / "m.csv", ["A", "B"], [[0, "x"], ["x", 0]])
    with pytest.raises(ParseError, match=r"\(A, B\)"):
        load_latency_matrix(p)


def test_ragged_file_and_missing_file(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("city,A,B\nA,0,1\n")
    with pytest.raises(ParseError, match="expected 2 rows"):
        load_latency_matrix(p)
    with pytest.raises(ParseError, match="nope.csv"):
        load_latency_matrix(tmp_path / "nope.csv")


def test_unknown_setup():
    with pytest.raises(ValidationError, match="unknown setup"):
        builtin_setup("mars")


def test_data_dir_override(tmp_path, monkeypatch):
    for name in ("netherlands.csv",):
        shutil.copy(data_dir() / name, tmp_path / name)
    write_matrix(tmp_path / "netherlands.csv", ["X", "Y"], [[0, 3], [3, 0]])
    monkeypatch.setenv("POWMESH_DATA_DIR", str(tmp_path))
    assert builtin_setup("netherlands").cities == ("X", "Y")


# --- bandwidth -------------------------------------------------------------


@pytest.mark.parametrize("pair", [(83, 6), (166, 12), (250, 18), (500, 36), (750, 54), (1000, 72), (1250, 90)])
def test_miner_count_matches_table_pairs(pair):
    n, m = pair
    assert miner_count(n, 0.072) == m


def test_miner_count_rounds_half_up():
    assert miner_count(10, 0.25) == 3
    assert miner_count(10, 0.04) == 0


@pytest.mark.parametrize("seed", [0, 1, 12345])
def test_bandwidth_samples_within_bounds(seed):
    bw = BandwidthDistribution()
    down, up = bw.sample(np.random.default_rng(seed), 20_000)
    assert down.min() >= 0.1e6 and down.max() <= 100e6
    assert up.min() >= 0.02e6 and up.max() <= 20e6


def test_bandwidth_mean_hits_target():
    # independent oracle: numerically integrate the truncated lognormal density
    for spec, target in ((DirectionSpec(0.1, 100.0, 5.0), 5.0), (DirectionSpec(0.02, 20.0, 1.0), 1.0)):
        mu, s = spec.mu, spec.sigma
        lo, hi = math.log(spec.min_mbps), math.log(spec.max_mbps)
        mass = norm.cdf((hi - mu) / s) - norm.cdf((lo - mu) / s)
        mean, _ = integrate.quad(lambda y: math.exp(y) * norm.pdf((y - mu) / s) / s, lo, hi)
        assert mean / mass == pytest.approx(target, rel=1e-8)
    down, _ = BandwidthDistribution().sample(np.random.default_rng(3), 200_000)
    assert down.mean() / 1e6 == pytest.approx(5.0, rel=0.03)


def test_loguniform_shape_hits_target():
    spec = DirectionSpec(0.1, 100.0, 5.0, shape="loguniform")
    u = (np.arange(400_000) + 0.5) / 400_000
    assert spec.quantiles(u).mean() / 1e6 == pytest.approx(5.0, rel=1e-3)


def test_bandwidth_directions_comonotone():
    down, up = BandwidthDistribution().sample(np.random.default_rng(5), 500)
    order = np.argsort(down)
    assert np.all(np.diff(up[order]) >= 0)


def test_bandwidth_spec_validation():
    with pytest.raises(ValidationError):
        DirectionSpec(1.0, 0.5, 0.7)
    with pytest.raises(ValidationError):
        DirectionSpec(0.1, 10.0, 10.0)
    with pytest.raises(ValidationError):
        DirectionSpec(0.1, 10.0, 1.0, shape="pareto")


def test_bandwidth_file(tmp_path):
    p = tmp_path / "bw.json"
    p.write_text(json.dumps({"download": {"samples_mbps": [1, 2, 3]}, "upload": {"min_mbps": 1, "max_mbps": 1, "mean_mbps": 1}}))
    bw = load_bandwidth(p)
    down, up = bw.sample(np.random.default_rng(0), 100)
    assert set(down / 1e6) <= {1.0, 2.0, 3.0}
    assert np.all(up == 1e6)
    assert BandwidthDistribution.from_dict(bw.to_dict()) == bw
    p.write_text("{}")
    with pytest.raises(ParseError):
        load_bandwidth(p)


# --- topology --------------------------------------------------------------


def test_anchor_network_shape():
    net = generate_network(250, setup="netherlands", seed=1)
    assert net.n_miners == 18
    assert sum(1 for d in net.devices if d.role is Role.REGULAR) == 232
    assert generate_network(83, setup="netherlands", seed=1).n_miners == 6


def test_generation_is_deterministic():
    a = generate_network(120, seed=42).to_json()
    b = generate_network(120, seed=42).to_json()
    assert a == b
    assert generate_network(120, seed=43).to_json() != a


def test_same_graph_across_equal_sized_setups():
    nl = generate_network(100, setup="netherlands", seed=9)
    eu = generate_network(100, setup="europe", seed=9)
    assert [(l.a, l.b) for l in nl.links] == [(l.a, l.b) for l in eu.links]
    assert [d.upload_bw for d in nl.devices] == [d.upload_bw for d in eu.devices]


@given(n=st.integers(7, 300), seed=st.integers(0, 2**32))
def test_network_invariants(n, seed):
    net = generate_network(n, seed=seed)
    assert net.n_miners == miner_count(n, 0.072)
    # balanced cities per role
    for role in (Role.MINER, Role.REGULAR):
        pops = city_populations(net, role)
        k = len(builtin_setup("netherlands").cities)
        total = sum(pops.values())
        if total >= k:
            assert max(pops.values()) - min(pops.values()) <= 1
    # every miner pair is linked
    miners = {d.id for d in net.devices if d.is_miner}
    linked = {(min(l.a, l.b), max(l.a, l.b)) for l in net.links}
    assert all((a, b) in linked for a in miners for b in miners if a < b)
    # miners get the fastest links
    if net.n_miners < n:
        slowest_miner = min(d.upload_bw for d in net.devices if d.is_miner)
        fastest_regular = max(d.upload_bw for d in net.devices if not d.is_miner)
        assert slowest_miner >= fastest_regular


def test_degree_ranges_respected_before_repair():
    net = generate_network(250, seed=4, degree_profile=DegreeProfile(miner_mesh=False))
    deg = net.degrees()
    regular = [deg[net.position(d.id)] for d in net.devices if not d.is_miner]
    miners = [deg[net.position(d.id)] for d in net.devices if d.is_miner]
    # stub pairing may drop self-loops and duplicates; repair adds at most a few edges
    assert np.mean(regular) <= 8 and np.mean(miners) > np.mean(regular)
    assert max(regular) <= 10


def test_infeasible_profile():
    with pytest.raises(InfeasibleTopology):
        generate_network(20, degree_profile=DegreeProfile(miner=(0, 0), regular=(0, 0), miner_mesh=False))
    with pytest.raises(InfeasibleTopology):
        DegreeProfile(regular=(5, 2))


def test_bad_generation_arguments():
    with pytest.raises(ValidationError):
        generate_network(1)
    with pytest.raises(ValidationError):
        generate_network(10, miner_ratio=1.5)
    with pytest.raises(ValidationError):
        generate_network(10, miner_ratio=0.01)


def test_network_round_trip(tmp_path):
    net = generate_network(60, setup="world", seed=2)
    p = tmp_path / "net.json"
    p.write_text(net.to_json())
    back = load_network(p)
    assert back == net
    assert back.to_json() == net.to_json()


def test_network_document_errors(tmp_path):
    p = tmp_path / "net.json"
    p.write_text('{"devices": []}')
    with pytest.raises(ParseError):
        load_network(p)
    devs = make_devices(3, 1, ["A"], BandwidthDistribution.constant(1.0), 0)
    with pytest.raises(ValidationError, match="not connected"):
        Network(tuple(devs), ())
