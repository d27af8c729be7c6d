"""Multi-head graph attention over a fixed road topology."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, Scope, ShapeError, Tensor, ops
from .dataio import GraphTopology

LEAKY_SLOPE = 0.2


@dataclass
class AttentionSnapshot:
    """Per-edge, per-head attention weights averaged over captured frames."""

    edges: list[tuple[int, int]]
    weights: np.ndarray  # [num_edges, num_heads]

    @property
    def num_heads(self) -> int:
        return self.weights.shape[1]

    def head_mean(self) -> dict[tuple[int, int], float]:
        return {e: float(w) for e, w in zip(self.edges, self.weights.mean(axis=1))}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst", "head", "weight"])
            for (s, d), row in zip(self.edges, self.weights):
                for h, v in enumerate(row):
                    w.writerow([s, d, h, repr(float(v))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AttentionSnapshot":
        table: dict[tuple[int, int], dict[int, float]] = {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                table.setdefault((int(rec["src"]), int(rec["dst"])), {})[int(rec["head"])] = float(rec["weight"])
        edges = sorted(table)
        heads = max(len(v) for v in table.values()) if table else 0
        weights = np.array([[table[e][h] for h in range(heads)] for e in edges]).reshape(len(edges), heads)
        return cls(edges, weights)


def init_gat(store: ParamStore, prefix: str, d_h: int, num_heads: int, rng: np.random.Generator,
             dtype=np.float64) -> None:
    if d_h % num_heads:
        raise ShapeError(f"hidden width {d_h} is not divisible by {num_heads} heads")
    d_head = d_h // num_heads
    bound = 1.0 / np.sqrt(d_h)
    abound = np.sqrt(6.0 / (d_head + 1))
    for h in range(num_heads):
        store.add(f"{prefix}.head.{h}.W", rng.uniform(-bound, bound, (d_head, d_h)).astype(dtype))
        store.add(f"{prefix}.head.{h}.a_src", rng.uniform(-abound, abound, d_head).astype(dtype))
        store.add(f"{prefix}.head.{h}.a_dst", rng.uniform(-abound, abound, d_head).astype(dtype))


def num_heads_of(p: Scope) -> int:
    h = 0
    while f"head.{h}.W" in p:
        h += 1
    return h


def gat_frames(z: Tensor, mask: np.ndarray, p: Scope, slope: float = LEAKY_SLOPE,
               capture: bool = False) -> tuple[Tensor, list[np.ndarray] | None]:
    """Attention over the node axis (-2) of ``z`` [..., N, d_h], independently per frame.

    ``mask[v, u]`` is true when u sends to v. Returns the concatenated head
    outputs and, if requested, each head's attention tensor [..., N_dst, N_src].
    """
    N = z.shape[-2]
    if mask.shape != (N, N):
        raise ShapeError(f"gat: adjacency {mask.shape} does not match {N} nodes")
    outs = []
    alphas = [] if capture else None
    for h in range(num_heads_of(p)):
        hp = p.scope(f"head.{h}")
        wz = ops.linear(z, hp["W"])  # [..., N, d_head]
        s_src = ops.sum(ops.mul(wz, hp["a_src"]), axis=-1)
        s_dst = ops.sum(ops.mul(wz, hp["a_dst"]), axis=-1)
        logits = ops.leaky_relu(ops.pairwise_add(s_dst, s_src), slope)  # [..., v, u]
        alpha = ops.softmax_masked(logits, mask)
        outs.append(ops.bmm(alpha, wz))
        if capture:
            alphas.append(alpha.data)
    return ops.concat_last_axis(outs), alphas


def gat_forward(z_frame: Tensor, topo: GraphTopology, p: Scope, capture: bool = False):
    """One frame [N, d_h] -> ([N, d_h], snapshot or None)."""
    out, alphas = gat_frames(z_frame, topo.adjacency_mask(), p, capture=capture)
    return out, (snapshot_from(alphas, topo) if capture else None)


def gat_over_axis(z: Tensor, topo: GraphTopology, p: Scope, capture: bool = False):
    """Shared-parameter attention on every time frame of z [..., T, N, d_h]."""
    out, alphas = gat_frames(z, topo.adjacency_mask(), p, capture=capture)
    return out, (snapshot_from(alphas, topo) if capture else None)


def snapshot_from(alphas: list[np.ndarray], topo: GraphTopology) -> AttentionSnapshot:
    edges = list(topo.edges)
    src = np.array([s for s, _ in edges])
    dst = np.array([d for _, d in edges])
    cols = []
    for a in alphas:
        mean = a.reshape(-1, a.shape[-2], a.shape[-1]).mean(axis=0)
        cols.append(mean[dst, src])
    return AttentionSnapshot(edges, np.stack(cols, axis=1).astype(np.float64))
