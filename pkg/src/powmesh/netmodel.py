"""Simulated IoT device populations, latency setups and point-to-point topologies."""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import InfeasibleTopology, ParseError, ValidationError

MBPS = 1_000_000.0
DEFAULT_MINER_RATIO = 0.072
INTRA_CITY_FLOOR_MS = 1.0
SETUP_FILES = {
    "netherlands": "netherlands.csv",
    "europe": "europe.csv",
    "world": "world.csv",
    "global": "global.csv",
}
SETUP_ALIASES = {"nl": "netherlands", "eu": "europe", "w": "world"}


class Role(str, enum.Enum):
    MINER = "Miner"
    REGULAR = "Regular"


class ArchRole(str, enum.Enum):
    FULL_PEER = "FullPeer"
    LIGHT_PEER = "LightPeer"
    OUTSIDER = "Outsider"


@dataclass(frozen=True)
class DeviceSpec:
    id: int
    role: Role
    arch_role: ArchRole
    city: str
    download_bw: float  # bits/s
    upload_bw: float  # bits/s
    mining_power: float = 0.0

    def __post_init__(self):
        if (self.role is Role.MINER) != (self.mining_power > 0):
            raise ValidationError(
                f"device {self.id}: role {self.role.value} inconsistent with mining_power={self.mining_power}"
            )
        if self.download_bw <= 0 or self.upload_bw <= 0:
            raise ValidationError(f"device {self.id}: bandwidth must be positive")

    @property
    def is_miner(self) -> bool:
        return self.role is Role.MINER


def device_to_dict(d: DeviceSpec) -> dict:
    return {
        "id": d.id,
        "role": d.role.value,
        "arch_role": d.arch_role.value,
        "city": d.city,
        "down_bw_bps": d.download_bw,
        "up_bw_bps": d.upload_bw,
        "mining_power": d.mining_power,
    }


def device_from_dict(d: dict) -> DeviceSpec:
    """Inverse of ``device_to_dict``; raises KeyError/ValueError on malformed records."""
    return DeviceSpec(
        id=int(d["id"]),
        role=Role(d["role"]),
        arch_role=ArchRole(d.get("arch_role", "FullPeer" if d["role"] == "Miner" else "LightPeer")),
        city=str(d["city"]),
        download_bw=float(d["down_bw_bps"]),
        upload_bw=float(d["up_bw_bps"]),
        mining_power=float(d.get("mining_power", 0.0)),
    )


@dataclass(frozen=True, eq=False)
class LatencyMatrix:
    """Symmetric link latencies (ms) between named cities."""

    cities: tuple[str, ...]
    latency_ms: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        m = np.array(self.latency_ms, dtype=float)
        object.__setattr__(self, "cities", tuple(self.cities))
        n = len(self.cities)
        if m.shape != (n, n):
            raise ValidationError(f"latency matrix shape {m.shape} does not match {n} cities")
        if len(set(self.cities)) != n:
            raise ValidationError("duplicate city labels")
        _validate_square(m, self.cities)
        m.setflags(write=False)
        object.__setattr__(self, "latency_ms", m)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.cities)})

    def __eq__(self, other):
        if not isinstance(other, LatencyMatrix):
            return NotImplemented
        return (self.cities, self.name) == (other.cities, other.name) and np.array_equal(self.latency_ms, other.latency_ms)

    __hash__ = None

    def index(self, city: str) -> int:
        try:
            return self._index[city]
        except KeyError:
            raise ValidationError(f"city {city!r} not in latency matrix {self.name!r}") from None

    def between(self, a: str, b: str, floor_ms: float = INTRA_CITY_FLOOR_MS) -> float:
        """Link latency between two cities; same-city pairs get ``floor_ms``."""
        if a == b:
            return float(floor_ms)
        return float(self.latency_ms[self.index(a), self.index(b)])

    def mean_pairwise(self) -> float:
        n = len(self.cities)
        iu = np.triu_indices(n, k=1)
        return float(self.latency_ms[iu].mean()) if n > 1 else 0.0

    def subset(self, cities: Sequence[str]) -> "LatencyMatrix":
        idx = [self.index(c) for c in cities]
        return LatencyMatrix(tuple(cities), self.latency_ms[np.ix_(idx, idx)], name=self.name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["city", *self.cities])
            for c, row in zip(self.cities, self.latency_ms):
                w.writerow([c, *(repr(float(v)) for v in row)])


def _validate_square(m: np.ndarray, cities: Sequence[str], tol: float = 1e-9) -> None:
    n = m.shape[0]
    for i in range(n):
        if m[i, i] != 0:
            raise ValidationError(f"nonzero diagonal at ({cities[i]}, {cities[i]}) = {m[i, i]}")
        for j in range(n):
            if not math.isfinite(m[i, j]) or m[i, j] < 0:
                raise ValidationError(f"invalid latency at ({cities[i]}, {cities[j]}) = {m[i, j]}")
            if j > i and abs(m[i, j] - m[j, i]) > tol:
                raise ValidationError(
                    f"asymmetric latency at ({cities[i]}, {cities[j]}): {m[i, j]} != {m[j, i]}"
                )


def data_dir() -> Path:
    override = os.environ.get("POWMESH_DATA_DIR")
    if override:
        return Path(override)
    return Path(str(resources.files("powmesh") / "data"))


def load_latency_matrix(path, name: str | None = None) -> LatencyMatrix:
    """Read a CSV latency file: header ``city,<names...>`` then one labelled row per city."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty latency file")
    header = [c.strip() for c in rows[0]]
    cities = header[1:]
    if not cities:
        raise ParseError(f"{path}: header lists no cities")
    body = rows[1:]
    if len(body) != len(cities):
        raise ParseError(f"{path}: expected {len(cities)} rows, found {len(body)}")
    m = np.zeros((len(cities), len(cities)))
    for i, row in enumerate(body):
        if len(row) != len(cities) + 1:
            raise ParseError(f"{path}: row {i + 1} ({row[0]!r}) has {len(row) - 1} values, expected {len(cities)}")
        if row[0].strip() != cities[i]:
            raise ParseError(f"{path}: row {i + 1} label {row[0].strip()!r} != header city {cities[i]!r}")
        for j, cell in enumerate(row[1:]):
            try:
                m[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell ({cities[i]}, {cities[j]}) = {cell!r}") from None
    return LatencyMatrix(tuple(cities), m, name=name or path.stem)


def builtin_setup(name: str) -> LatencyMatrix:
    """Return the Netherlands, Europe or World matrix (``global`` merges all three)."""
    key = name.strip().lower()
    key = SETUP_ALIASES.get(key, key)
    if key not in SETUP_FILES:
        raise ValidationError(f"unknown setup {name!r}; expected one of {sorted(SETUP_FILES)}")
    return load_latency_matrix(data_dir() / SETUP_FILES[key], name=key)


# --- bandwidth -----------------------------------------------------------


def _loguniform_clipped_mean(scale: float, lo: float, hi: float) -> float:
    # E[clip(scale * X, lo, hi)] with X log-uniform on [lo, hi]
    lr = math.log(hi / lo)
    u1 = min(max(-math.log(scale) / lr, 0.0), 1.0)
    u2 = min(max(1.0 - math.log(scale) / lr, 0.0), 1.0)
    return lo * u1 + scale * lo * (math.exp(u2 * lr) - math.exp(u1 * lr)) / lr + hi * (1.0 - u2)


def _lognormal_truncated_mean(mu: float, sigma: float, lo: float, hi: float) -> float:
    a = (math.log(lo) - mu) / sigma
    b = (math.log(hi) - mu) / sigma
    z = norm.cdf(b) - norm.cdf(a)
    if not z > 1e-300:
        # all mass piles onto one bound
        return lo if mu < math.log(lo) else hi
    return math.exp(mu + sigma * sigma / 2) * (norm.cdf(b - sigma) - norm.cdf(a - sigma)) / z


SHAPES = ("lognormal", "loguniform")


@dataclass(frozen=True)
class DirectionSpec:
    """One direction of a bandwidth distribution, in Mbps.

    ``lognormal``: lognormal truncated to [min, max] whose location is solved
    so the truncated mean equals ``mean_mbps``; ``sigma`` is the log-space spread.
    ``loguniform``: log-uniform on [min, max], scaled to hit the mean, then clipped.
    """

    min_mbps: float = 0.0
    max_mbps: float = 0.0
    mean_mbps: float = 0.0
    samples_mbps: tuple[float, ...] = ()
    shape: str = "lognormal"
    sigma: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "samples_mbps", tuple(float(s) for s in self.samples_mbps))
        if self.samples_mbps:
            if min(self.samples_mbps) <= 0:
                raise ValidationError("bandwidth samples must be positive")
            return
        lo, hi, mean = self.min_mbps, self.max_mbps, self.mean_mbps
        if not (0 < lo <= mean <= hi):
            raise ValidationError(f"bandwidth bounds need 0 < min <= mean <= max, got {lo}/{mean}/{hi}")
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown bandwidth shape {self.shape!r}; expected one of {SHAPES}")
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if lo < hi and not lo < mean < hi:
            raise ValidationError(f"mean must lie strictly inside ({lo}, {hi}) for a non-constant rate")

    @property
    def scale(self) -> float:
        """Log-uniform scale factor that hits the target mean."""
        lo, hi, mean = self.min_mbps, self.max_mbps, self.mean_mbps
        if hi == lo:
            return 1.0
        return brentq(lambda s: _loguniform_clipped_mean(s, lo, hi) - mean, lo / hi, hi / lo, xtol=1e-14)

    @property
    def mu(self) -> float:
        """Log-space location of the truncated lognormal that hits the target mean."""
        lo, hi, mean = self.min_mbps, self.max_mbps, self.mean_mbps
        span = 4 * self.sigma
        return brentq(
            lambda m: _lognormal_truncated_mean(m, self.sigma, lo, hi) - mean,
            math.log(lo) - span,
            math.log(hi) + span,
            xtol=1e-13,
        )

    def quantiles(self, u: np.ndarray) -> np.ndarray:
        """Map uniform draws to rates in bits/s."""
        if self.samples_mbps:
            arr = np.sort(np.asarray(self.samples_mbps))
            idx = np.minimum((u * len(arr)).astype(int), len(arr) - 1)
            return arr[idx] * MBPS
        lo, hi = self.min_mbps, self.max_mbps
        u = np.asarray(u, dtype=float)
        if hi == lo:
            return np.full(len(u), lo * MBPS)
        if self.shape == "loguniform":
            x = self.scale * lo * np.exp(u * math.log(hi / lo))
        else:
            mu, sg = self.mu, self.sigma
            ca, cb = norm.cdf((math.log(lo) - mu) / sg), norm.cdf((math.log(hi) - mu) / sg)
            x = np.exp(mu + sg * norm.ppf(ca + u * (cb - ca)))
        return np.clip(x, lo, hi) * MBPS

    def to_dict(self) -> dict:
        if self.samples_mbps:
            return {"samples_mbps": list(self.samples_mbps)}
        d = {"min_mbps": self.min_mbps, "max_mbps": self.max_mbps, "mean_mbps": self.mean_mbps, "shape": self.shape}
        if self.shape == "lognormal":
            d["sigma"] = self.sigma
        return d


@dataclass(frozen=True)
class BandwidthDistribution:
    """Per-device download/upload rates.

    A device's download and upload come from the same quantile, so slow links
    are slow both ways.  See ``DirectionSpec`` for the parametric shapes.
    """

    download: DirectionSpec = field(default_factory=lambda: DirectionSpec(0.1, 100.0, 5.0))
    upload: DirectionSpec = field(default_factory=lambda: DirectionSpec(0.02, 20.0, 1.0))

    @classmethod
    def constant(cls, mbps: float) -> "BandwidthDistribution":
        d = DirectionSpec(mbps, mbps, mbps)
        return cls(d, d)

    def sample(self, rng: np.random.Generator, n: int, descending: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` devices; ``descending`` orders them fastest first."""
        u = rng.random(n)
        if descending:
            u = np.sort(u)[::-1]
        return self.download.quantiles(u), self.upload.quantiles(u)

    def to_dict(self) -> dict:
        return {"download": self.download.to_dict(), "upload": self.upload.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BandwidthDistribution":
        try:
            return cls(DirectionSpec(**d["download"]), DirectionSpec(**d["upload"]))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bandwidth distribution: {exc}") from exc


def load_bandwidth(path) -> BandwidthDistribution:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return BandwidthDistribution.from_dict(data)


# --- topology ------------------------------------------------------------


@dataclass(frozen=True)
class DegreeProfile:
    """Inclusive uniform ranges for the target degree of each role."""

    miner: tuple[int, int] = (8, 16)
    regular: tuple[int, int] = (4, 8)
    miner_mesh: bool = True  # also link every miner pair directly

    def __post_init__(self):
        for lo, hi in (self.miner, self.regular):
            if lo > hi or lo < 0:
                raise InfeasibleTopology(f"bad degree range [{lo}, {hi}]")


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    latency_ms: float


@dataclass(frozen=True)
class Network:
    devices: tuple[DeviceSpec, ...]
    links: tuple[Link, ...]
    setup_name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "links", tuple(self.links))
        index = {}
        for pos, d in enumerate(self.devices):
            if d.arch_role is ArchRole.OUTSIDER:
                raise ValidationError(f"device {d.id} is an outsider and cannot join a network")
            if d.id in index:
                raise ValidationError(f"duplicate device id {d.id}")
            index[d.id] = pos
        adj: list[list[tuple[int, float]]] = [[] for _ in self.devices]
        seen = set()
        for link in self.links:
            if link.a == link.b:
                raise ValidationError(f"self-link on device {link.a}")
            key = (min(link.a, link.b), max(link.a, link.b))
            if key in seen:
                raise ValidationError(f"duplicate link {key}")
            if link.a not in index or link.b not in index:
                raise ValidationError(f"link {key} references an unknown device")
            if link.latency_ms < 0:
                raise ValidationError(f"negative latency on link {key}")
            seen.add(key)
            adj[index[link.a]].append((index[link.b], link.latency_ms))
            adj[index[link.b]].append((index[link.a], link.latency_ms))
        for row in adj:
            row.sort()
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_adj", tuple(tuple(r) for r in adj))
        if len(self.devices) > 1 and not _connected(self._adj):
            raise ValidationError("network is not connected")

    @property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Neighbour lists by device position: ``(position, latency_ms)``."""
        return self._adj

    def position(self, device_id: int) -> int:
        return self._index[device_id]

    @property
    def n_miners(self) -> int:
        return sum(1 for d in self.devices if d.is_miner)

    @property
    def miner_fraction(self) -> float:
        return self.n_miners / len(self.devices)

    def degrees(self) -> list[int]:
        return [len(r) for r in self._adj]

    def to_dict(self) -> dict:
        return {
            "setup_name": self.setup_name,
            "devices": [device_to_dict(d) for d in self.devices],
            "links": [{"id_a": l.a, "id_b": l.b, "latency_ms": l.latency_ms} for l in self.links],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        try:
            devices = [device_from_dict(d) for d in data["devices"]]
            links = [Link(int(l["id_a"]), int(l["id_b"]), float(l["latency_ms"])) for l in data["links"]]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ParseError(f"network document: {exc}") from exc
        return cls(tuple(devices), tuple(links), data.get("setup_name", "custom"))


def load_network(path) -> Network:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return Network.from_dict(data)


def _connected(adj) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(adj)


def miner_count(n_devices: int, miner_ratio: float) -> int:
    """Round-half-up of ``n_devices * miner_ratio``."""
    return int(math.floor(n_devices * miner_ratio + 0.5 + 1e-9))


def _wire(targets: Sequence[int], rng: np.random.Generator) -> list[tuple[int, int]]:
    """Configuration model followed by a connectivity repair pass."""
    n = len(targets)
    stubs = np.repeat(np.arange(n), targets)
    rng.shuffle(stubs)
    edges: set[tuple[int, int]] = set()
    for k in range(0, len(stubs) - 1, 2):
        a, b = int(stubs[k]), int(stubs[k + 1])
        if a != b:
            edges.add((min(a, b), max(a, b)))

    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    degree = [0] * n
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    comps: dict[int, list[int]] = {}
    for v in range(n):
        comps.setdefault(find(v), []).append(v)
    groups = sorted(comps.values(), key=lambda g: (-len(g), g[0]))
    main = groups[0]
    for g in groups[1:]:
        # attach each stray component through its least-connected members
        u = min(g, key=lambda v: (degree[v], v))
        choices = sorted(main, key=lambda v: (degree[v], v))[: max(1, len(main) // 4)]
        w = int(choices[int(rng.integers(len(choices)))])
        edges.add((min(u, w), max(u, w)))
        degree[u] += 1
        degree[w] += 1
        main = main + g
    return sorted(edges)


def build_network(
    devices: Sequence[DeviceSpec],
    latency: LatencyMatrix,
    degree_profile: DegreeProfile | None = None,
    seed: int = 0,
    intra_city_floor_ms: float = INTRA_CITY_FLOOR_MS,
    setup_name: str | None = None,
) -> Network:
    """Wire an existing device list into a connected point-to-point network."""
    profile = degree_profile or DegreeProfile()
    devices = tuple(devices)
    n = len(devices)
    if n < 1:
        raise InfeasibleTopology("network needs at least one device")
    if n > 1 and max(profile.miner[1], profile.regular[1]) < 1:
        raise InfeasibleTopology("degree profile allows no links; the network cannot be connected")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    targets = []
    for d in devices:
        lo, hi = profile.miner if d.is_miner else profile.regular
        targets.append(min(int(rng.integers(lo, hi + 1)), n - 1))
    edges = _wire(targets, rng) if n > 1 else []
    if profile.miner_mesh:
        have = set(edges)
        miners = [i for i, d in enumerate(devices) if d.is_miner]
        for x, a in enumerate(miners):
            for b in miners[x + 1 :]:
                if (a, b) not in have:
                    edges.append((a, b))
    links = tuple(
        Link(devices[a].id, devices[b].id, latency.between(devices[a].city, devices[b].city, intra_city_floor_ms))
        for a, b in edges
    )
    return Network(devices, links, setup_name or latency.name)


def make_devices(
    n_devices: int,
    n_miners: int,
    cities: Sequence[str],
    bw: BandwidthDistribution,
    seed: int,
    mining_power: float = 1.0,
    capable_miners: bool = True,
) -> list[DeviceSpec]:
    """Miners take ids ``0..n_miners-1``; each role is spread round-robin over ``cities``.

    With ``capable_miners`` the drawn rates are sorted so miners get the fastest links.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    down, up = bw.sample(rng, n_devices, descending=capable_miners)
    k = len(cities)
    devices = []
    for i in range(n_devices):
        miner = i < n_miners
        slot = i if miner else (i - n_miners + n_miners % k)
        devices.append(
            DeviceSpec(
                id=i,
                role=Role.MINER if miner else Role.REGULAR,
                arch_role=ArchRole.FULL_PEER if miner else ArchRole.LIGHT_PEER,
                city=cities[slot % k],
                download_bw=float(down[i]),
                upload_bw=float(up[i]),
                mining_power=mining_power if miner else 0.0,
            )
        )
    return devices


def generate_network(
    n_devices: int,
    miner_ratio: float = DEFAULT_MINER_RATIO,
    setup: LatencyMatrix | str = "netherlands",
    bw: BandwidthDistribution | None = None,
    degree_profile: DegreeProfile | None = None,
    seed: int = 0,
    *,
    n_miners: int | None = None,
    intra_city_floor_ms: float = INTRA_CITY_FLOOR_MS,
    capable_miners: bool = True,
) -> Network:
    """Generate a connected network of miners and regular devices.

    Device attributes and wiring depend only on ``seed`` and the number of
    cities, never on latency values, so the same seed over two setups of equal
    city count yields the same graph with different link latencies.
    """
    if n_devices < 2:
        raise ValidationError(f"n_devices must be >= 2, got {n_devices}")
    if n_miners is None:
        if not 0 < miner_ratio < 1:
            raise ValidationError(f"miner_ratio must be in (0, 1), got {miner_ratio}")
        n_miners = miner_count(n_devices, miner_ratio)
    if not 1 <= n_miners <= n_devices:
        raise ValidationError(f"need 1 <= miners <= devices, got {n_miners} of {n_devices}")
    matrix = builtin_setup(setup) if isinstance(setup, str) else setup
    devices = make_devices(
        n_devices, n_miners, matrix.cities, bw or BandwidthDistribution(), seed, capable_miners=capable_miners
    )
    return build_network(devices, matrix, degree_profile, seed, intra_city_floor_ms, matrix.name)


def city_populations(network: Network, role: Role | None = None) -> dict[str, int]:
    counts: dict[str, int] = {}
    for d in network.devices:
        if role is None or d.role is role:
            counts[d.city] = counts.get(d.city, 0) + 1
    return counts


def uniform_latency_network(
    devices: Iterable[DeviceSpec], edges: Iterable[tuple[int, int]], latency_ms: float, setup_name: str = "custom"
) -> Network:
    """Hand-built network with one latency on every link (test and planning helper)."""
    return Network(tuple(devices), tuple(Link(a, b, latency_ms) for a, b in edges), setup_name)
