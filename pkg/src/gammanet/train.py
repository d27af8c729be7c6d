"""Masked-MAE training with Adam and early stopping; horizon-wise evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, ShapeError, Tensor, ops
from .dataio import NormStats, TrafficDataset, WindowSet, compute_stats, make_windows, split
from .model import ModelConfig, forward, init_params

log = logging.getLogger(__name__)

NAMED_HORIZONS = (3, 6, 12)


class SkipBatch(Exception):
    """Every target in the batch is missing."""


class TrainingContractError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    patience: int = 30
    max_epochs: int = 100
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> list[str]:
        problems = []
        if self.lr <= 0:
            problems.append("train.lr must be positive")
        if self.batch_size < 1:
            problems.append("train.batch_size must be >= 1")
        if self.patience < 1:
            problems.append("train.patience must be >= 1")
        if self.max_epochs < 1:
            problems.append("train.max_epochs must be >= 1")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            problems.append("train.betas must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            problems.append("train.dtype must be 'float32' or 'float64'")
        return problems

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


# ------------------------------------------------------------------ loss / metrics

def masked_mae_loss(y_hat: Tensor, y: np.ndarray, y_mask: np.ndarray) -> Tensor:
    if y_hat.shape != np.shape(y) or np.shape(y) != np.shape(y_mask):
        raise ShapeError(f"loss: prediction {y_hat.shape}, target {np.shape(y)}, mask {np.shape(y_mask)}")
    count = int(np.count_nonzero(y_mask))
    if count == 0:
        raise SkipBatch("all targets masked")
    m = np.asarray(y_mask, dtype=y_hat.dtype)
    diff = ops.sub(y_hat, np.asarray(y, dtype=y_hat.dtype))
    return ops.mul(ops.sum(ops.mul(ops.abs_(diff), m)), 1.0 / count)


def metrics(y_hat, y, y_mask) -> tuple[float, float, float]:
    """Masked (MAE, RMSE, MAPE in percent) on raw scale."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(y_mask, dtype=bool) & (y != 0)
    if not m.any():
        raise SkipBatch("all targets masked")
    err = (y_hat - y)[m]
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    mape = float(np.mean(np.abs(err / y[m]))) * 100.0
    return mae, rmse, mape


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState, cfg: TrainConfig) -> None:
    b1, b2 = cfg.betas
    for path in store:
        if store[path].grad is None:
            raise TrainingContractError(f"parameter {path!r} received no gradient")
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for path in store:
        p = store[path]
        g = p.grad
        m = state.m.get(path)
        if m is None:
            m = state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        v = state.v[path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)
        p.grad = None


# ------------------------------------------------------------------ prediction

def predict_raw(params: ParamStore, cfg: ModelConfig, stats: NormStats, ds: TrafficDataset,
                windows: WindowSet, batch_size: int = 64) -> np.ndarray:
    """Denormalized predictions [S, N, T'] for every window."""
    out = []
    for lo in range(0, len(windows), batch_size):
        y_hat, _ = forward(windows.x[lo:lo + batch_size], ds.topology, params, cfg)
        out.append(stats.denormalize(y_hat.data.astype(np.float64)))
    return np.concatenate(out, axis=0)


@dataclass
class EvalReport:
    horizons: dict[int, tuple[float, float, float]]

    @property
    def average(self) -> tuple[float, float, float]:
        vals = np.array(list(self.horizons.values()))
        return tuple(float(v) for v in vals.mean(axis=0))

    def named(self) -> dict[int, tuple[float, float, float]]:
        return {h: self.horizons[h] for h in NAMED_HORIZONS if h in self.horizons}

    def to_dict(self) -> dict:
        doc = {str(h): dict(zip(("mae", "rmse", "mape"), v)) for h, v in self.horizons.items()}
        doc["avg"] = dict(zip(("mae", "rmse", "mape"), self.average))
        return doc

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def report_from_predictions(y_pred: np.ndarray, y: np.ndarray, mask: np.ndarray) -> EvalReport:
    horizons = {}
    for j in range(y.shape[-1]):
        horizons[j + 1] = metrics(y_pred[..., j], y[..., j], mask[..., j])
    return EvalReport(horizons)


def evaluate(params: ParamStore, cfg: ModelConfig, stats: NormStats, ds: TrafficDataset,
             which: str = "test", ratios=(7, 1, 2)) -> EvalReport:
    if ds.num_nodes != params["embed.E_a"].shape[1]:
        raise ShapeError(f"checkpoint expects {params['embed.E_a'].shape[1]} nodes, dataset has {ds.num_nodes}")
    ranges = dict(zip(("train", "val", "test"), split(ds, ratios, cfg.T + cfg.T_prime)))
    if which not in ranges:
        raise ValueError(f"unknown split {which!r}; expected one of train, val, test")
    w = make_windows(ds, ranges[which], cfg.T, cfg.T_prime, stats)
    return report_from_predictions(predict_raw(params, cfg, stats, ds, w), w.y, w.y_mask)


# ------------------------------------------------------------------ training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: float
    is_best: bool


@dataclass
class TrainResult:
    params: ParamStore
    stats: NormStats
    history: list[EpochRecord]
    best_epoch: int

    def history_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_mae", "val_rmse", "val_mape", "is_best"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_mae), repr(r.val_rmse),
                            repr(r.val_mape), int(r.is_best)])


def train_step(params: ParamStore, state: AdamState, tcfg: TrainConfig, cfg: ModelConfig,
               ds: TrafficDataset, stats: NormStats, x, y, mask) -> float:
    y_hat, _ = forward(x, ds.topology, params, cfg)
    y_raw = ops.add(ops.mul(y_hat, stats.std), stats.mean)
    loss = masked_mae_loss(y_raw, y, mask)
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    loss.backward()
    adam_step(params, state, tcfg)
    return value


def train(ds: TrafficDataset, cfg: ModelConfig, tcfg: TrainConfig, ratios=(7, 1, 2),
          progress=None) -> TrainResult:
    problems = cfg.validate() + tcfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    window = cfg.T + cfg.T_prime
    tr, va, _ = split(ds, ratios, window)
    stats = compute_stats(ds, tr)
    train_w = make_windows(ds, tr, cfg.T, cfg.T_prime, stats)
    val_w = make_windows(ds, va, cfg.T, cfg.T_prime, stats)
    dtype = np.dtype(tcfg.dtype)
    params = init_params(cfg, ds.topology, tcfg.seed, dtype)
    state = AdamState()
    rng = np.random.default_rng(tcfg.seed)

    history: list[EpochRecord] = []
    best = (math.inf, -1, None)
    since_best = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(len(train_w))
        losses = []
        for b, lo in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = order[lo:lo + tcfg.batch_size]
            try:
                losses.append(train_step(params, state, tcfg, cfg, ds, stats,
                                         train_w.x[idx], train_w.y[idx], train_w.y_mask[idx]))
            except SkipBatch:
                params.zero_grad()
                continue
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}") from exc
        val_pred = predict_raw(params, cfg, stats, ds, val_w)
        vmae, vrmse, vmape = metrics(val_pred, val_w.y, val_w.y_mask)
        improved = vmae < best[0]
        if improved:
            best = (vmae, epoch, params.copy())
            since_best = 0
        else:
            since_best += 1
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else math.nan, vmae, vrmse, vmape, improved)
        history.append(rec)
        log.info("epoch %d train_loss %.4f val_mae %.4f%s", epoch, rec.train_loss, vmae, " *" if improved else "")
        if progress is not None:
            progress(rec)
        if since_best >= tcfg.patience:
            break
    return TrainResult(best[2], stats, history, best[1])
