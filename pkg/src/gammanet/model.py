"""End-to-end forecaster: embedding, temporal and spatial attention/scan stacks, regression head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, ShapeError, Tensor, ops
from .dataio import GraphTopology, NormStats
from .embedding import embed, init_embedding
from .gat import AttentionSnapshot, gat_frames, init_gat, snapshot_from
from .sscan import ScanTrace, init_ssm, mamba_over_axis

LN_EPS = 1e-5


@dataclass
class ModelConfig:
    T: int = 12
    T_prime: int = 12
    d_f: int = 24
    d_a: int = 80
    num_layers: int = 3
    num_heads: int = 4
    d_state: int = 16
    expand: int = 2
    steps_per_day: int = 288
    use_gat: bool = True
    use_temporal_mamba: bool = True
    use_spatial_mamba: bool = True

    @property
    def d_h(self) -> int:
        return 3 * self.d_f + self.d_a

    def validate(self) -> list[str]:
        problems = []
        for f in ("T", "T_prime", "d_f", "d_a", "num_layers", "num_heads", "d_state", "expand", "steps_per_day"):
            if getattr(self, f) <= 0:
                problems.append(f"model.{f} must be positive")
        if self.num_heads > 0 and self.d_h % self.num_heads:
            problems.append(f"hidden width {self.d_h} is not divisible by num_heads={self.num_heads}")
        return problems

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


ABLATIONS = {
    "full": {},
    "w/o GAT": {"use_gat": False},
    "w/o Temporal": {"use_temporal_mamba": False},
    "w/o Spatio": {"use_spatial_mamba": False},
    "w/o both": {"use_temporal_mamba": False, "use_spatial_mamba": False},
}


def init_params(cfg: ModelConfig, topo: GraphTopology, seed: int, dtype=np.float64) -> ParamStore:
    problems = cfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d_h = cfg.d_h
    init_embedding(store, "embed", cfg.d_f, cfg.d_a, cfg.T, topo.num_nodes, cfg.steps_per_day, rng, dtype)
    for i in range(cfg.num_layers):
        pre = f"block.{i}"
        if cfg.use_gat:
            init_gat(store, f"{pre}.gat1", d_h, cfg.num_heads, rng, dtype)
            init_gat(store, f"{pre}.gat2", d_h, cfg.num_heads, rng, dtype)
        if cfg.use_temporal_mamba:
            init_ssm(store, f"{pre}.mamba_t", d_h, cfg.d_state, rng, cfg.expand, dtype)
        if cfg.use_spatial_mamba:
            init_ssm(store, f"{pre}.mamba_s", d_h, cfg.d_state, rng, cfg.expand, dtype)
        for ln in ("ln_t1", "ln_t2", "ln_s1", "ln_s2"):
            store.add(f"{pre}.{ln}.gamma", np.ones(d_h, dtype=dtype))
            store.add(f"{pre}.{ln}.beta", np.zeros(d_h, dtype=dtype))
    bound = 1.0 / np.sqrt(cfg.T * d_h)
    store.add("head.W", rng.uniform(-bound, bound, (cfg.T_prime, cfg.T * d_h)).astype(dtype))
    store.add("head.b", rng.uniform(-bound, bound, cfg.T_prime).astype(dtype))
    return store


def _ln(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    return ops.layer_norm(x, store[f"{prefix}.gamma"], store[f"{prefix}.beta"], LN_EPS)


@dataclass
class ForwardExtras:
    attention: dict[str, AttentionSnapshot]
    scans: ScanTrace


def forward(x, topo: GraphTopology, params: ParamStore, cfg: ModelConfig,
            capture_attention: bool = False, capture_scans: bool = False):
    """Predict normalized flow [..., N, T'] from inputs [..., T, N, 3].

    Returns ``(y_hat, extras)``; ``extras`` is None unless a capture flag is set.
    """
    x = np.asarray(x)
    if x.shape[-2] != topo.num_nodes:
        raise ShapeError(f"input has {x.shape[-2]} nodes, topology has {topo.num_nodes}")
    if x.shape[-3] != cfg.T:
        raise ShapeError(f"input window {x.shape[-3]} != configured T={cfg.T}")
    mask = topo.adjacency_mask()
    capture = capture_attention or capture_scans
    extras = ForwardExtras({}, ScanTrace()) if capture else None

    z = embed(x, params.scope("embed"))
    for stage, axis, gat_name, scan_name, use_scan in (
            ("t", "time", "gat1", "mamba_t", cfg.use_temporal_mamba),
            ("s", "space", "gat2", "mamba_s", cfg.use_spatial_mamba)):
        for i in range(cfg.num_layers):
            pre = f"block.{i}"
            if cfg.use_gat:
                h, alphas = gat_frames(z, mask, params.scope(f"{pre}.{gat_name}"), capture=capture_attention)
                if capture_attention:
                    extras.attention[f"{pre}.{gat_name}"] = snapshot_from(alphas, topo)
            else:
                h = z
            h_hat = _ln(ops.add(h, z), params, f"{pre}.ln_{stage}1")
            if use_scan:
                trace = [] if capture_scans else None
                m = mamba_over_axis(h_hat, axis, params.scope(f"{pre}.{scan_name}"), trace)
                if capture_scans:
                    extras.scans.record(i, axis, trace[0])
            else:
                m = h_hat
            z = _ln(ops.add(m, h_hat), params, f"{pre}.ln_{stage}2")

    k = z.ndim
    perm = list(range(k - 3)) + [k - 2, k - 3, k - 1]
    zt = ops.transpose_axes(z, perm)  # [..., N, T, d_h]
    flat = ops.reshape(zt, zt.shape[:-2] + (zt.shape[-2] * zt.shape[-1],))
    y_hat = ops.linear(flat, params["head.W"], params["head.b"])
    return y_hat, extras


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(directory: str | Path, params: ParamStore, cfg: ModelConfig,
                    stats: NormStats | None = None, extra: dict | None = None) -> None:
    directory = Path(directory)
    params.save(directory)
    doc = {"model": asdict(cfg)}
    if stats is not None:
        doc["norm"] = {"mean": stats.mean, "std": stats.std}
    if extra:
        doc.update(extra)
    with open(directory / "config.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_checkpoint(directory: str | Path) -> tuple[ParamStore, ModelConfig, NormStats | None, dict]:
    directory = Path(directory)
    with open(directory / "config.json") as fh:
        doc = json.load(fh)
    cfg = ModelConfig.from_dict(doc["model"])
    stats = NormStats(doc["norm"]["mean"], doc["norm"]["std"]) if "norm" in doc else None
    return ParamStore.load(directory), cfg, stats, doc
