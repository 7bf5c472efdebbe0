"""Discrete-event simulation of PoW mining and block relay over a :class:`Network`.

Mining is a superposition of per-miner Poisson processes.  Each device keeps
its own best tip (longest chain, first-seen on ties) and pushes full blocks to
neighbours that lack them.  Links add latency; bandwidth is the minimum of the
sender's upload share and the receiver's download, with downloads serialized
FIFO at each receiver.

Upload contention has two modes.  ``fifo`` (default): a device uploads one
block at a time, miners first, then the rest in queue order; when a queued copy
would reach a receiver sooner than the copy already on its way, the slower
transfer is aborted and only its bytes sent so far are billed.  ``split``: all
transfers started together share the upload equally.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import IncompleteTrace, NoMiners, ValidationError
from .netmodel import Network

GENESIS = 0
CONTENTION_MODES = ("fifo", "split")

_MINE, _UPLOAD_DONE, _ARRIVE = 0, 1, 2


@dataclass(frozen=True)
class FixedInterval:
    target_interval: float

    def __post_init__(self):
        if not self.target_interval > 0:
            raise ValidationError(f"target_interval must be > 0, got {self.target_interval}")


@dataclass(frozen=True)
class FixedDifficulty:
    """Difficulty held constant; the interval scales with total mining power.

    ``ref_interval`` is the interval observed with ``ref_miners`` unit-power
    miners at this difficulty.
    """

    difficulty: float = 1.0
    ref_miners: float = 6
    ref_interval: float = 180.0

    def __post_init__(self):
        if not (self.difficulty > 0 and self.ref_miners > 0 and self.ref_interval > 0):
            raise ValidationError("FixedDifficulty fields must all be positive")


Regime = Union[FixedInterval, FixedDifficulty]


@dataclass(frozen=True)
class SimConfig:
    block_size: int
    regime: Regime
    duration: float = 6000.0
    avg_tx_size: int = 250
    seed: int = 0
    contention: str = "fifo"

    def __post_init__(self):
        if not self.block_size > 0:
            raise ValidationError(f"block_size must be > 0, got {self.block_size}")
        if not self.duration > 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if not self.avg_tx_size > 0:
            raise ValidationError(f"avg_tx_size must be > 0, got {self.avg_tx_size}")
        if self.contention not in CONTENTION_MODES:
            raise ValidationError(f"contention must be one of {CONTENTION_MODES}, got {self.contention!r}")

    def echo(self) -> dict:
        d = asdict(self)
        d["regime"] = {"kind": type(self.regime).__name__, **asdict(self.regime)}
        return d


@dataclass(frozen=True)
class Block:
    id: int
    miner_id: int
    parent_id: int
    height: int
    mined_at: float
    size: int


@dataclass
class EventTrace:
    blocks: list[Block]
    receptions: list[tuple[int, int, float]]
    transfers: list[tuple[int, int, int, float, float, int]]
    canonical_chain: list[int] = field(default_factory=list)
    device_ids: tuple[int, ...] = ()
    duration: float = 0.0
    end_time: float = 0.0
    config: dict = field(default_factory=dict)
    log: list[tuple] = field(default_factory=list, repr=False)
    closed: bool = False

    @property
    def mined(self) -> list[Block]:
        return [b for b in self.blocks if b.id != GENESIS]

    def require_closed(self) -> None:
        if not self.closed:
            raise IncompleteTrace("trace has not been finalized")

    def iter_records(self) -> Iterator[dict]:
        for kind, t, block, device, peer, *extra in self.log:
            rec = {"kind": kind, "time_s": t, "block_id": block, "device_id": device}
            if peer is not None:
                rec["peer_id"] = peer
            if extra:
                rec["end_s"], rec["bytes"] = extra
            yield rec
        yield {
            "kind": "footer",
            "canonical_chain": self.canonical_chain,
            "config": self.config,
            "duration": self.duration,
            "end_time": self.end_time,
        }

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.iter_records())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.iter_records():
                fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def transfer_time(size: float, link_latency: float, sender_up: float, receiver_down: float, concurrent_out: int = 1) -> float:
    """Seconds to move ``size`` bytes over a link with ``link_latency`` ms.

    The sender's upload is shared equally among ``concurrent_out`` transfers.
    """
    if sender_up <= 0 or receiver_down <= 0 or concurrent_out < 1:
        raise ValueError("rates must be positive and concurrent_out >= 1")
    return link_latency / 1000.0 + size * 8.0 / min(sender_up / concurrent_out, receiver_down)


def effective_interval(config: SimConfig, network: Network) -> float:
    total_power = sum(d.mining_power for d in network.devices)
    if total_power <= 0:
        raise NoMiners("network has no mining power")
    regime = config.regime
    if isinstance(regime, FixedInterval):
        return regime.target_interval
    return regime.ref_interval * (regime.ref_miners / total_power)


def finalize_chain(trace: EventTrace) -> tuple[list[int], set[int], int]:
    """Longest chain (ties: earliest tip, then lowest id), stale set and fork count."""
    blocks = trace.blocks
    if not blocks:
        return [GENESIS], set(), 0
    by_id = {b.id: b for b in blocks}
    tip = min(blocks, key=lambda b: (-b.height, b.mined_at, b.id))
    chain = []
    x = tip.id
    while True:
        chain.append(x)
        if x == GENESIS:
            break
        x = by_id[x].parent_id
    chain.reverse()
    on_chain = set(chain)
    stale = {b.id for b in blocks if b.id not in on_chain}
    children: dict[int, int] = {}
    for b in blocks:
        if b.id != GENESIS:
            children[b.parent_id] = children.get(b.parent_id, 0) + 1
    forks = sum(1 for c in children.values() if c >= 2)
    return chain, stale, forks


def _mining_schedule(rng: np.random.Generator, interval: float, duration: float, weights: np.ndarray):
    expected = duration / interval
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    times = np.cumsum(rng.exponential(interval, size=chunk))
    while times[-1] <= duration:
        more = np.cumsum(rng.exponential(interval, size=chunk)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times <= duration]
    picks = rng.choice(len(weights), size=len(times), p=weights) if len(times) else np.empty(0, dtype=int)
    return times.tolist(), picks.tolist()


def run(network: Network, config: SimConfig) -> EventTrace:
    """Simulate ``config.duration`` seconds of mining, then drain in-flight transfers."""
    interval = effective_interval(config, network)
    devices = network.devices
    n = len(devices)
    miner_pos = [i for i, d in enumerate(devices) if d.mining_power > 0]
    power = np.array([devices[i].mining_power for i in miner_pos], dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    mine_times, mine_picks = _mining_schedule(rng, interval, config.duration, power / power.sum())

    up = [d.upload_bw for d in devices]
    down = [d.download_bw for d in devices]
    # full peers (miners) are served before light peers; otherwise adjacency order
    adj = [
        sorted(((v, lat / 1000.0) for v, lat in row), key=lambda e: devices[e[0]].mining_power <= 0)
        for row in network.adjacency
    ]
    ids = [d.id for d in devices]
    size = config.block_size
    bits = size * 8.0
    split = config.contention == "split"

    parent = [GENESIS]
    height = [0]
    mined_at = [0.0]
    miner_of = [-1]
    has = [bytearray(b"\x01" * n)]
    accepted = [bytearray(b"\x01" * n)]
    inflight = [bytearray(n)]
    tip = [GENESIS] * n
    orphans: list[dict[int, list[int]]] = [{} for _ in range(n)]
    down_free = [0.0] * n
    queue = [deque() for _ in range(n)]
    pending: list[dict] = [{} for _ in range(n)]  # (receiver, block) -> height target
    busy = [False] * n
    active_out: list[list[float]] = [[] for _ in range(n)]
    live: dict[tuple[int, int], int] = {}  # (block, receiver) -> transfer index
    uploading = [-1] * n
    cancelled: set[int] = set()
    tx_meta: list[tuple[int, float, float]] = []  # sender, start, upload seconds

    receptions: list[tuple[int, int, float]] = []
    transfers: list[tuple[int, int, int, float, float, int]] = []
    log: list[tuple] = []
    heap: list[tuple] = []
    seq = 0

    for t, p in zip(mine_times, mine_picks):
        heap.append((t, seq, _MINE, miner_pos[p], 0, 0))
        seq += 1
    heapq.heapify(heap)

    def arrival(r: int, lat: float, t: float, share: float) -> float:
        recv_start = t + lat if t + lat > down_free[r] else down_free[r]
        return max(recv_start + bits / down[r], t + lat + bits / share)

    def start(s: int, r: int, lat: float, b: int, t: float, share: float) -> None:
        nonlocal seq
        inflight[b][r] = 1
        tx_up = bits / share
        recv_start = t + lat if t + lat > down_free[r] else down_free[r]
        down_free[r] = recv_start + bits / down[r]
        end = max(down_free[r], t + lat + tx_up)
        tid = len(transfers)
        live[(b, r)] = tid
        heapq.heappush(heap, (end, seq, _ARRIVE, b, r, tid))
        seq += 1
        transfers.append((b, ids[s], ids[r], t, end, size))
        tx_meta.append((s, t, tx_up))
        log.append(("send", t, b, ids[s], ids[r], end, size))
        if not split:
            busy[s] = True
            uploading[s] = tid
            heapq.heappush(heap, (t + tx_up, seq, _UPLOAD_DONE, s, tid, 0))
            seq += 1
        else:
            active_out[s].append(t + tx_up)

    def abort(tid: int, t: float) -> None:
        # the receiver found a faster source; bill only what was already sent
        cancelled.add(tid)
        s, t0, tx_up = tx_meta[tid]
        b, si, ri, _, _, _ = transfers[tid]
        sent = int(size * min(1.0, (t - t0) / tx_up)) if tx_up > 0 else size
        transfers[tid] = (b, si, ri, t0, t, sent)
        log.append(("abort", t, b, si, ri))
        if uploading[s] == tid:
            uploading[s] = -1
            start_next(s, t)

    def start_next(s: int, t: float) -> None:
        q = queue[s]
        while q:
            r, lat, b, target_h = q.popleft()
            target_h = max(target_h, pending[s].pop((r, b), target_h))
            if has[b][r] or height[tip[r]] >= target_h:
                continue
            if inflight[b][r]:
                old = live[(b, r)]
                if arrival(r, lat, t, up[s]) >= transfers[old][4] - 1e-9:
                    continue
                start(s, r, lat, b, t, up[s])
                abort(old, t)
                return
            start(s, r, lat, b, t, up[s])
            return
        busy[s] = False

    def relay(s: int, new_tip: int, t: float) -> None:
        target_h = height[new_tip]
        burst = []
        for r, lat in adj[s]:
            if height[tip[r]] >= target_h:
                continue
            chain = []
            x = new_tip
            ps = pending[s]
            while x != GENESIS and not has[x][r]:
                if (r, x) in ps:
                    # already queued: make sure it is not dropped as outdated
                    if ps[(r, x)] < target_h:
                        ps[(r, x)] = target_h
                    x = parent[x]
                    continue
                # an ancestor already on its way to r is left alone; the new tip
                # itself is queued anyway in fifo mode so a faster copy may win
                if inflight[x][r] and (split or x != new_tip):
                    break
                chain.append(x)
                x = parent[x]
            for x in reversed(chain):
                burst.append((r, lat, x, target_h))
        if not burst:
            return
        if split:
            act = [e for e in active_out[s] if e > t]
            active_out[s] = act
            share = up[s] / (len(act) + len(burst))
            for r, lat, x, _ in burst:
                start(s, r, lat, x, t, share)
        else:
            q = queue[s]
            ps = pending[s]
            for item in burst:
                q.append(item)
                ps[(item[0], item[2])] = item[3]
            if not busy[s]:
                start_next(s, t)

    def accept(r: int, b: int) -> bool:
        """Connect ``b`` (and any orphans waiting on it) to r's tree; True if tip moved."""
        moved = False
        stack = [b]
        orph = orphans[r]
        while stack:
            y = stack.pop()
            accepted[y][r] = 1
            if height[y] > height[tip[r]]:
                tip[r] = y
                moved = True
            waiting = orph.pop(y, None)
            if waiting:
                stack.extend(reversed(waiting))
        return moved

    t = 0.0
    while heap:
        t, _, kind, a, b, c = heapq.heappop(heap)
        if kind == _ARRIVE:
            blk, r, tid = a, b, c
            if tid in cancelled:
                continue
            s = tx_meta[tid][0]
            del live[(blk, r)]
            inflight[blk][r] = 0
            if has[blk][r]:
                continue
            has[blk][r] = 1
            receptions.append((blk, ids[r], t))
            log.append(("recv", t, blk, ids[r], ids[s]))
            if accepted[parent[blk]][r]:
                if accept(r, blk):
                    relay(r, tip[r], t)
            else:
                orphans[r].setdefault(parent[blk], []).append(blk)
        elif kind == _UPLOAD_DONE:
            if uploading[a] == b:
                uploading[a] = -1
                start_next(a, t)
        else:
            m = a
            blk = len(parent)
            parent.append(tip[m])
            height.append(height[tip[m]] + 1)
            mined_at.append(t)
            miner_of.append(ids[m])
            h = bytearray(n)
            h[m] = 1
            has.append(h)
            acc = bytearray(n)
            acc[m] = 1
            accepted.append(acc)
            inflight.append(bytearray(n))
            tip[m] = blk
            receptions.append((blk, ids[m], t))
            log.append(("mine", t, blk, ids[m], None))
            relay(m, blk, t)

    blocks = [
        Block(i, miner_of[i], parent[i] if i else GENESIS, height[i], mined_at[i], size if i else 0)
        for i in range(len(parent))
    ]
    trace = EventTrace(
        blocks=blocks,
        receptions=receptions,
        transfers=transfers,
        device_ids=tuple(ids),
        duration=float(config.duration),
        end_time=max(t, float(config.duration)),
        config=config.echo(),
        log=log,
    )
    trace.canonical_chain = finalize_chain(trace)[0]
    trace.closed = True
    return trace
