"""Traffic dataset ingestion, windowing, normalization and synthetic generation.

Directory format::

    flow.csv   timestamp,node_0,...,node_{N-1}   (ISO-8601, one row per interval)
    edges.csv  src,dst                            (0-based physical links)
    meta.json  {"interval_minutes": int, "num_nodes": int, "start": ISO-8601}

A flow reading of exactly 0.0 is a missing value.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Base class for dataset problems."""


class MissingFileError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class NodeIndexError(DataError):
    pass


class IntervalError(DataError):
    pass


class SplitError(DataError):
    pass


class EmptyWindowError(DataError):
    pass


@dataclass(frozen=True)
class GraphTopology:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]

    @classmethod
    def from_links(cls, num_nodes: int, links) -> "GraphTopology":
        """Symmetrize physical links and add one self-loop per node."""
        pairs = set()
        for s, d in links:
            s, d = int(s), int(d)
            if not (0 <= s < num_nodes and 0 <= d < num_nodes):
                raise NodeIndexError(f"edge ({s}, {d}) out of range for {num_nodes} nodes")
            pairs.add((s, d))
            pairs.add((d, s))
        pairs.update((i, i) for i in range(num_nodes))
        return cls(num_nodes, tuple(sorted(pairs)))

    def adjacency_mask(self) -> np.ndarray:
        """Boolean [dst, src] matrix; row v marks the in-neighbors of v."""
        m = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        for s, d in self.edges:
            m[d, s] = True
        return m

    def permuted(self, perm: Sequence[int]) -> "GraphTopology":
        """Topology after relabelling node ``perm[k]`` as ``k``."""
        inv = np.argsort(perm)
        return GraphTopology.from_links(self.num_nodes, [(inv[s], inv[d]) for s, d in self.edges])


@dataclass
class TrafficDataset:
    flow: np.ndarray  # [T_total, N]
    tod_index: np.ndarray
    dow_index: np.ndarray
    topology: GraphTopology
    interval_minutes: int
    start: datetime = field(default_factory=lambda: datetime(2024, 1, 1))

    @property
    def steps_per_day(self) -> int:
        return 1440 // self.interval_minutes

    @property
    def num_nodes(self) -> int:
        return self.flow.shape[1]

    @property
    def num_steps(self) -> int:
        return self.flow.shape[0]

    def timestamps(self) -> list[datetime]:
        step = timedelta(minutes=self.interval_minutes)
        return [self.start + i * step for i in range(self.num_steps)]


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def normalize(self, v):
        return (v - self.mean) / self.std

    def denormalize(self, v):
        return v * self.std + self.mean


@dataclass
class WindowSample:
    x: np.ndarray  # [T, N, 3]: normalized flow, tod index, dow index
    y: np.ndarray  # [N, T'] raw scale
    y_mask: np.ndarray  # [N, T'] bool


@dataclass
class WindowSet:
    """All windows of one range, stacked along a leading sample axis."""

    x: np.ndarray  # [S, T, N, 3]
    y: np.ndarray  # [S, N, T']
    y_mask: np.ndarray
    anchors: np.ndarray  # row index of the first input step

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.x[i], self.y[i], self.y_mask[i])

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.y[idx], self.y_mask[idx], self.anchors[idx])


# ------------------------------------------------------------------ calendar

def _calendar(start: datetime, n: int, interval: int) -> tuple[np.ndarray, np.ndarray]:
    spd = 1440 // interval
    first = (start.hour * 60 + start.minute) // interval
    k = np.arange(n) + first
    tod = k % spd
    dow = (start.weekday() + k // spd) % 7
    return tod.astype(np.int64), dow.astype(np.int64)


# ------------------------------------------------------------------ I/O

def load_dataset(dir_path: str | Path) -> TrafficDataset:
    d = Path(dir_path)
    for name in ("flow.csv", "edges.csv", "meta.json"):
        if not (d / name).is_file():
            raise MissingFileError(f"{d / name}: file not found")
    with open(d / "meta.json") as fh:
        meta = json.load(fh)
    try:
        interval = int(meta["interval_minutes"])
        n = int(meta["num_nodes"])
        start = datetime.fromisoformat(meta["start"])
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{d / 'meta.json'}: invalid metadata ({exc})") from exc
    if interval <= 0 or 1440 % interval:
        raise IntervalError(f"interval_minutes={interval} does not divide a day")

    rows = []
    stamps = []
    with open(d / "flow.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != n + 1:
            raise RaggedRowError(f"{d / 'flow.csv'} line 1: expected {n + 1} columns in header")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != n + 1:
                raise RaggedRowError(f"{d / 'flow.csv'} line {lineno}: expected {n + 1} fields, got {len(rec)}")
            try:
                stamps.append(datetime.fromisoformat(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise DataError(f"{d / 'flow.csv'} line {lineno}: {exc}") from exc
    flow = np.array(rows, dtype=np.float64).reshape(len(rows), n)
    if not np.all(np.isfinite(flow)) or np.any(flow < 0):
        bad = int(np.argwhere(~np.isfinite(flow) | (flow < 0))[0, 0]) + 2
        raise DataError(f"{d / 'flow.csv'} line {bad}: flow must be finite and non-negative")
    step = timedelta(minutes=interval)
    if stamps and stamps[0] != start:
        raise IntervalError(f"{d / 'flow.csv'} line 2: first timestamp {stamps[0]} != meta start {start}")
    for i in range(1, len(stamps)):
        if stamps[i] - stamps[i - 1] != step:
            raise IntervalError(f"{d / 'flow.csv'} line {i + 2}: timestamps not {interval} minutes apart")

    links = []
    with open(d / "edges.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise RaggedRowError(f"{d / 'edges.csv'} line {lineno}: expected 2 fields")
            try:
                s, t = int(rec[0]), int(rec[1])
            except ValueError as exc:
                raise DataError(f"{d / 'edges.csv'} line {lineno}: {exc}") from exc
            if not (0 <= s < n and 0 <= t < n):
                raise NodeIndexError(f"{d / 'edges.csv'} line {lineno}: node index out of range [0, {n})")
            links.append((s, t))

    tod, dow = _calendar(start, flow.shape[0], interval)
    return TrafficDataset(flow, tod, dow, GraphTopology.from_links(n, links), interval, start)


def save_dataset(ds: TrafficDataset, dir_path: str | Path) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    n = ds.num_nodes
    with open(d / "flow.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"node_{i}" for i in range(n)])
        for ts, row in zip(ds.timestamps(), ds.flow):
            w.writerow([ts.isoformat()] + [repr(float(v)) for v in row])
    with open(d / "edges.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for s, t in ds.topology.edges:
            if s < t:
                w.writerow([s, t])
    with open(d / "meta.json", "w") as fh:
        json.dump({"interval_minutes": ds.interval_minutes, "num_nodes": n,
                   "start": ds.start.isoformat()}, fh, indent=1)


# ------------------------------------------------------------------ protocol

def split(num_steps: int | TrafficDataset, ratios: Sequence[float] = (7, 1, 2),
          min_len: int = 0) -> tuple[range, range, range]:
    """Chronological train/val/test ranges; integer remainder goes to test."""
    total = num_steps.num_steps if isinstance(num_steps, TrafficDataset) else int(num_steps)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or ratios[0] <= 0:
        raise SplitError(f"invalid split ratios {tuple(ratios)}")
    if ratios[1] <= 0 or ratios[2] <= 0:
        raise SplitError("validation and test parts are required (ratios must all be positive)")
    s = float(sum(ratios))
    n_train = int(np.floor(total * ratios[0] / s))
    n_val = int(np.floor(total * ratios[1] / s))
    parts = (range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, total))
    for name, r in zip(("train", "val", "test"), parts):
        if len(r) < max(min_len, 1):
            raise SplitError(f"{name} split has {len(r)} rows, needs at least {max(min_len, 1)}")
    return parts


def compute_stats(ds: TrafficDataset, rows: range) -> NormStats:
    vals = ds.flow[rows.start:rows.stop]
    vals = vals[vals != 0]
    if vals.size == 0:
        raise DataError("no non-missing readings in the training range")
    std = float(vals.std())
    return NormStats(float(vals.mean()), std if std > 0 else 1.0)


def make_windows(ds: TrafficDataset, rows: range, T: int = 12, T_prime: int = 12,
                 stats: NormStats | None = None) -> WindowSet:
    """Stride-1 windows fully inside ``rows``."""
    length = len(rows)
    count = length - T - T_prime + 1
    if count < 1:
        raise EmptyWindowError(f"range of {length} rows cannot hold a {T}+{T_prime} window")
    if stats is None:
        raise ValueError("make_windows needs normalization stats")
    lo = rows.start
    seg_flow = ds.flow[lo:rows.stop]
    norm = stats.normalize(seg_flow)
    feat = np.stack([norm,
                     np.broadcast_to(ds.tod_index[lo:rows.stop, None], seg_flow.shape),
                     np.broadcast_to(ds.dow_index[lo:rows.stop, None], seg_flow.shape)], axis=-1)
    starts = np.arange(count)
    xi = starts[:, None] + np.arange(T)[None, :]
    yi = starts[:, None] + T + np.arange(T_prime)[None, :]
    x = feat[xi]  # [S, T, N, 3]
    y = np.transpose(seg_flow[yi], (0, 2, 1)).copy()  # [S, N, T']
    return WindowSet(x, y, y != 0, starts + lo)


# ------------------------------------------------------------------ synthetic

def _ring_chords(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Directed ring over a random ordering of sensor ids, plus forward chords.

    Ids are shuffled so road order is not recoverable from node index alone.
    """
    order = rng.permutation(n).tolist()
    links = [(order[k], order[(k + 1) % n]) for k in range(n)] if n > 2 else [(order[0], order[1])]
    n_chords = max(1, n // 5) if n >= 6 else 0
    for _ in range(n_chords):
        a = int(rng.integers(n))
        b = int((a + rng.integers(2, n - 1)) % n)
        links.append((order[min(a, b)], order[max(a, b)]))
    return links


def _hop_distances(num_nodes: int, links: Sequence[tuple[int, int]]) -> np.ndarray:
    """BFS hop counts along directed ``links``; -1 where unreachable."""
    n = num_nodes
    dist = np.full((n, n), -1, dtype=np.int64)
    nbrs = [[] for _ in range(n)]
    for s, d in links:
        if s != d:
            nbrs[s].append(d)
    for src in range(n):
        dist[src, src] = 0
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in nbrs[u]:
                    if dist[src, v] < 0:
                        dist[src, v] = dist[src, u] + 1
                        nxt.append(v)
            frontier = nxt
    return dist


def synth_dataset(num_nodes: int, days: int, seed: int, interval_minutes: int = 5,
                  dropout: float = 0.01, noise: float = 0.015,
                  start: datetime = datetime(2024, 1, 1)) -> TrafficDataset:
    """Deterministic desk-scale traffic data with graph-borne congestion.

    Each node carries a two-peak daily profile with a weekend level shift.
    Incidents start at random nodes (more often at rush hour) and travel
    downstream hop by hop, with a fixed lag and geometric attenuation, along
    the physical links oriented as generated (ring order, chords forward
    along the ring). A node's future congestion is therefore visible earlier at its
    upstream neighbours. Flow drops multiplicatively as congestion builds.
    """
    if num_nodes < 2:
        raise ValueError("synth_dataset needs at least 2 nodes")
    if days < 1:
        raise ValueError("synth_dataset needs at least 1 day")
    if 1440 % interval_minutes:
        raise IntervalError(f"interval_minutes={interval_minutes} does not divide a day")
    rng = np.random.default_rng(seed)
    n = num_nodes
    spd = 1440 // interval_minutes
    total = days * spd
    links = _ring_chords(n, rng)
    topo = GraphTopology.from_links(n, links)
    tod, dow = _calendar(start, total, interval_minutes)

    level = rng.uniform(200.0, 400.0, n)
    am = rng.uniform(0.4, 0.8, n)
    pm = rng.uniform(0.4, 0.8, n)
    shift = rng.uniform(-0.75, 0.75, n)
    h = (tod * (24.0 / spd))[:, None] - shift[None, :]
    rush = (am * np.exp(-0.5 * ((h - 8.0) / 1.2) ** 2)
            + pm * np.exp(-0.5 * ((h - 17.5) / 1.5) ** 2))
    profile = 0.35 + 0.25 * np.sin(2 * np.pi * (h - 9.0) / 24.0) + rush
    weekend = (dow >= 5)[:, None]
    profile = np.where(weekend, 0.75 * profile, profile)

    # incidents: rate follows the rush-hour load
    lag = max(1, round(15 / interval_minutes))
    max_hops, decay = 6, 0.8
    tau = max(1.0, 40.0 / interval_minutes)
    rate = (4.0 / spd) * (0.3 + rush) / (0.3 + rush).mean()
    starts = rng.random((total, n)) < rate
    amp = np.where(starts, rng.uniform(0.6, 1.6, (total, n)), 0.0)
    dist = _hop_distances(n, links)
    impulses = np.zeros((total, n))
    for j in range(n):
        t0 = np.nonzero(amp[:, j])[0]
        for i in range(n):
            d = dist[j, i]
            if d < 0 or d > max_hops:
                continue
            ts = t0 + d * lag
            ok = ts < total
            np.add.at(impulses[:, i], ts[ok], amp[t0[ok], j] * decay ** d)
    s = np.arange(int(8 * tau))
    kernel = (s / tau) * np.exp(1.0 - s / tau)
    congestion = np.stack([np.convolve(impulses[:, i], kernel)[:total] for i in range(n)], axis=1)

    flow = level[None, :] * profile * np.exp(-0.5 * congestion)
    flow = flow * (1.0 + noise * rng.standard_normal(flow.shape))
    flow = np.maximum(np.round(flow, 1), 0.1)
    if dropout > 0:
        flow[rng.random(flow.shape) < dropout] = 0.0
    return TrafficDataset(flow, tod, dow, topo, interval_minutes, start)
