"""Interpretability analyses: transition spectra, attention communities, peak regression."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import ContractError
from .gat import AttentionSnapshot
from .sscan import ScanTrace


class FitUndefinedError(ValueError):
    """Too few or degenerate peak pairs for a least-squares line."""


# ------------------------------------------------------------------ spectra

@dataclass
class SvdEntry:
    layer: int
    axis: str
    sigma: np.ndarray  # descending

    @property
    def stable(self) -> bool:
        return bool(self.sigma.size) and float(self.sigma[0]) < 1.0


def svd_analyze(matrix, layer: int = 0, axis: str = "") -> SvdEntry:
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ContractError(f"svd_analyze needs a non-empty matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd_analyze: matrix has non-finite entries")
    return SvdEntry(layer, axis, np.linalg.svd(a, compute_uv=False))


def diagonal_spectrum(values, layer: int = 0, axis: str = "") -> SvdEntry:
    """Spectrum of ``diag(values)`` without forming the matrix: sorted magnitudes."""
    v = np.abs(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ContractError("diagonal_spectrum needs at least one value")
    return SvdEntry(layer, axis, np.sort(v)[::-1])


def analyze_scans(trace: ScanTrace) -> list[SvdEntry]:
    return [diagonal_spectrum(arr, layer, axis) for layer, axis, arr in trace.layers]


def write_svd_report(entries: Sequence[SvdEntry], out_dir: str | Path) -> None:
    out = Path(out_dir)
    with open(out / "svd_spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "axis", "rank", "sigma"])
        for e in entries:
            for r, s in enumerate(e.sigma):
                w.writerow([e.layer, e.axis, r, repr(float(s))])
    verdicts = [{"layer": e.layer, "axis": e.axis, "max_sigma": float(e.sigma[0]),
                 "stable": e.stable} for e in entries]
    with open(out / "svd_verdicts.json", "w") as fh:
        json.dump({"layers": verdicts, "all_stable": all(e.stable for e in entries)}, fh, indent=1)


# ------------------------------------------------------------------ attention graph

@dataclass
class WeightedGraph:
    """Undirected weighted graph on nodes 0..n-1 stored as a symmetric dense matrix."""

    weights: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.weights.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        iu, ju = np.nonzero(np.triu(self.weights, 1))
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(iu, ju)]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> "WeightedGraph":
        w = np.zeros((n, n))
        for u, v, x in edges:
            w[u, v] = w[v, u] = x
        return cls(w)


def build_attention_graph(snapshot: AttentionSnapshot, threshold: float = 0.1,
                          num_nodes: int | None = None) -> WeightedGraph:
    """Keep (u, v) when the head-averaged weight of either direction exceeds ``threshold``."""
    n = num_nodes
    if n is None:
        n = 1 + max((max(s, d) for s, d in snapshot.edges), default=-1)
    avg = snapshot.head_mean()
    w = np.zeros((n, n))
    for (s, d), x in avg.items():
        if s == d or x <= threshold:
            continue
        best = max(x, avg.get((d, s), 0.0))
        w[s, d] = w[d, s] = max(w[s, d], best)
    return WeightedGraph(w)


# ------------------------------------------------------------------ Louvain

@dataclass
class CommunityReport:
    assignment: np.ndarray  # node -> community id
    modularity: float
    threshold: float | None = None
    trace: list[float] = field(default_factory=list)

    @property
    def num_communities(self) -> int:
        return int(self.assignment.max()) + 1 if self.assignment.size else 0


def modularity(weights: np.ndarray, assignment: np.ndarray) -> float:
    w = np.asarray(weights, dtype=np.float64)
    two_m = w.sum()
    if two_m == 0:
        return 0.0
    k = w.sum(axis=1)
    same = assignment[:, None] == assignment[None, :]
    return float(((w - np.outer(k, k) / two_m) * same).sum() / two_m)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Contiguous ids ordered by each community's smallest member."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, c in enumerate(labels):
        if c not in mapping:
            mapping[c] = len(mapping)
        out[i] = mapping[c]
    return out


def _local_moves(w: np.ndarray) -> np.ndarray:
    """One Louvain move phase on a (possibly aggregated) graph."""
    n = w.shape[0]
    k = w.sum(axis=1)
    two_m = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    improved = True
    while improved:
        improved = False
        for i in range(n):
            old = comm[i]
            tot[old] -= k[i]
            links = np.bincount(comm, weights=w[i], minlength=n)
            links[old] -= w[i, i]
            best, best_gain = old, links[old] - tot[old] * k[i] / two_m
            for c in np.unique(comm[np.nonzero(w[i])[0]]):
                gain = links[c] - tot[c] * k[i] / two_m
                if gain > best_gain + 1e-12:
                    best, best_gain = c, gain
            comm[i] = best
            tot[best] += k[i]
            if best != old:
                improved = True
    return _relabel(comm)


def louvain(graph: WeightedGraph | np.ndarray, threshold: float | None = None) -> CommunityReport:
    """Two-phase Louvain modularity maximization with ascending-index visit order."""
    w = np.asarray(graph.weights if isinstance(graph, WeightedGraph) else graph, dtype=np.float64)
    n = w.shape[0]
    node_comm = np.arange(n)
    if n == 0 or w.sum() == 0:
        return CommunityReport(node_comm, 0.0, threshold, [0.0])
    trace = [modularity(w, node_comm)]
    current = w
    while True:
        labels = _local_moves(current)
        ncomm = labels.max() + 1
        if ncomm == current.shape[0]:
            break
        node_comm = labels[node_comm]
        trace.append(modularity(w, node_comm))
        agg = np.zeros((ncomm, ncomm))
        np.add.at(agg, (labels[:, None], labels[None, :]), current)
        current = agg
    node_comm = _relabel(node_comm)
    return CommunityReport(node_comm, modularity(w, node_comm), threshold, trace)


def reorder_adjacency(graph: WeightedGraph, report: CommunityReport) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency with nodes sorted by (community, index); returns (matrix, permutation)."""
    perm = np.lexsort((np.arange(graph.num_nodes), report.assignment))
    return graph.weights[np.ix_(perm, perm)], perm


def block_mass_ratio(matrix: np.ndarray, labels_in_order: np.ndarray) -> float:
    """Fraction of total weight lying outside same-label blocks."""
    total = matrix.sum()
    if total == 0:
        return 0.0
    same = labels_in_order[:, None] == labels_in_order[None, :]
    return float(matrix[~same].sum() / total)


def write_community_report(graph: WeightedGraph, report: CommunityReport, out_dir: str | Path,
                           tag: str = "") -> None:
    out = Path(out_dir)
    sfx = f"_{tag}" if tag else ""
    with open(out / f"communities{sfx}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "community"])
        for i, c in enumerate(report.assignment):
            w.writerow([i, int(c)])
    matrix, perm = reorder_adjacency(graph, report)
    np.savetxt(out / f"adjacency_reordered{sfx}.csv", matrix, delimiter=",", fmt="%.17g")
    with open(out / f"permutation{sfx}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "node"])
        for pos, node in enumerate(perm):
            w.writerow([pos, int(node)])
    with open(out / f"communities{sfx}.json", "w") as fh:
        json.dump({"modularity": report.modularity, "threshold": report.threshold,
                   "num_communities": report.num_communities, "num_edges": len(graph.edges()),
                   "modularity_trace": report.trace}, fh, indent=1)


# ------------------------------------------------------------------ peaks

@dataclass
class PeakFit:
    node: int
    slope: float
    intercept: float
    r2: float
    pairs: np.ndarray  # [k, 2] (true peak, predicted peak)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)


def block_peaks(series, window: int = 12) -> np.ndarray:
    """Max of each non-overlapping block, ignoring zeros; NaN for an all-missing block."""
    s = np.asarray(series, dtype=np.float64)
    nb = len(s) // window
    blocks = s[:nb * window].reshape(nb, window)
    masked = np.where(blocks != 0, blocks, -np.inf)
    peaks = masked.max(axis=1)
    return np.where(np.isfinite(peaks), peaks, np.nan)


def ols(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a x + b and its R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise FitUndefinedError(f"need at least 2 peak pairs, got {x.size}")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    if sxx == 0 or ss_tot == 0:
        raise FitUndefinedError("peak values have zero variance")
    a = float(((x - xm) * (y - ym)).sum() / sxx)
    b = float(ym - a * xm)
    ss_res = float(((y - (a * x + b)) ** 2).sum())
    return a, b, 1.0 - ss_res / ss_tot


def peak_regression(true_series, pred_series, window: int = 12, node: int = 0) -> PeakFit:
    t = np.asarray(true_series, dtype=np.float64)
    p = np.asarray(pred_series, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"peak_regression: series shapes {t.shape} and {p.shape}")
    if len(t) < window:
        raise FitUndefinedError(f"series of length {len(t)} shorter than window {window}")
    tp, pp = block_peaks(t, window), block_peaks(p, window)
    keep = ~(np.isnan(tp) | np.isnan(pp))
    pairs = np.stack([tp[keep], pp[keep]], axis=1)
    a, b, r2 = ols(pairs[:, 0], pairs[:, 1])
    return PeakFit(node, a, b, r2, pairs)


def write_peak_fits(fits: Sequence[PeakFit], out_dir: str | Path) -> None:
    with open(Path(out_dir) / "peak_fits.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "slope", "intercept", "r2", "num_pairs"])
        for f in fits:
            w.writerow([f.node, repr(f.slope), repr(f.intercept), repr(f.r2), f.num_pairs])
