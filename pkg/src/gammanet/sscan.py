"""Selective state-space scan block, run along time or along nodes.

The per-channel state matrix is diagonal and stored as ``A_log`` with
``A = -exp(A_log)``, so the discretized transition ``exp(delta * A)`` always
lies in (0, 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, Scope, ShapeError, Tensor, ops

CONV_WIDTH = 4


def init_ssm(store: ParamStore, prefix: str, d_h: int, d_state: int, rng: np.random.Generator,
             expand: int = 2, dtype=np.float64, dt_min: float = 1e-3, dt_max: float = 1e-1) -> None:
    d_inner = expand * d_h
    b_in = 1.0 / np.sqrt(d_h)
    b_inner = 1.0 / np.sqrt(d_inner)
    b_conv = 1.0 / np.sqrt(CONV_WIDTH)
    store.add(f"{prefix}.in_proj", rng.uniform(-b_in, b_in, (2 * d_inner, d_h)).astype(dtype))
    store.add(f"{prefix}.conv_w", rng.uniform(-b_conv, b_conv, (d_inner, CONV_WIDTH)).astype(dtype))
    store.add(f"{prefix}.conv_b", rng.uniform(-b_conv, b_conv, d_inner).astype(dtype))
    store.add(f"{prefix}.x_proj", rng.uniform(-b_inner, b_inner, (2 * d_state + 1, d_inner)).astype(dtype))
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), d_inner))
    store.add(f"{prefix}.dt_bias", (dt + np.log(-np.expm1(-dt))).astype(dtype))
    a_log = np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1)))
    store.add(f"{prefix}.A_log", a_log.astype(dtype))
    store.add(f"{prefix}.D", np.ones(d_inner, dtype=dtype))
    store.add(f"{prefix}.out_proj", rng.uniform(-b_inner, b_inner, (d_h, d_inner)).astype(dtype))


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _readout(C: np.ndarray, h: np.ndarray) -> np.ndarray:
    """sum_s C[..., s] * h[..., s, :], accumulated in ascending state order."""
    y = C[..., 0, None] * h[..., 0, :]
    for s in range(1, C.shape[-1]):
        y = y + C[..., s, None] * h[..., s, :]
    return y


def _split_proj(bcd: np.ndarray, d_state: int):
    return bcd[..., :d_state], bcd[..., d_state:2 * d_state], bcd[..., 2 * d_state]


@dataclass
class ScanTrace:
    """Batch-averaged discretized transitions, one [d_inner, d_state] array per scan layer."""

    layers: list[tuple[int, str, np.ndarray]] = field(default_factory=list)

    def record(self, layer: int, axis: str, abar_mean: np.ndarray) -> None:
        self.layers.append((layer, axis, abar_mean))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "axis", "channel", "state", "abar_mean"])
            for layer, axis, arr in self.layers:
                for (c, s), v in np.ndenumerate(arr):
                    w.writerow([layer, axis, c, s, repr(float(v))])


def scan(u: Tensor, bcd: Tensor, A_log: Tensor, dt_bias: Tensor, D: Tensor,
         trace: list | None = None) -> Tensor:
    """Differentiable selective scan over axis -2 of ``u`` [..., L, d_inner].

    ``bcd`` [..., L, 2*d_state + 1] packs the input-dependent B, C and the
    step-size logit. Work is O(L * d_inner * d_state); all channels and
    sequences advance together, one step of the recurrence at a time.
    """
    d_inner, d_state = A_log.shape
    if u.shape[-1] != d_inner or bcd.shape[:-1] != u.shape[:-1] or bcd.shape[-1] != 2 * d_state + 1:
        raise ShapeError(f"scan: u {u.shape}, projections {bcd.shape}, A_log {A_log.shape}")
    lead = u.shape[:-2]
    L = u.shape[-2]
    # step-major layout [L, M, ...] keeps every recurrence step contiguous
    ud = np.ascontiguousarray(np.swapaxes(u.data.reshape(-1, L, d_inner), 0, 1))
    pr = np.ascontiguousarray(np.swapaxes(bcd.data.reshape(-1, L, 2 * d_state + 1), 0, 1))
    Bm, Cm, dl = _split_proj(pr, d_state)
    z = dl[..., None] + dt_bias.data  # [L, M, d_inner]
    delta = ops._softplus(z)
    A = -np.exp(A_log.data.T)  # [d_state, d_inner]
    # state tensors are [L, M, d_state, d_inner]
    abar = np.exp(delta[:, :, None, :] * A)
    du = delta * ud
    hs = Bm[..., None] * du[:, :, None, :]
    for t in range(1, L):
        hs[t] += abar[t] * hs[t - 1]
    y = _readout(Cm, hs) + ud * D.data
    if trace is not None:
        trace.append(abar.reshape(-1, d_state, d_inner).mean(axis=0).T)

    def from_step_major(a):
        return np.swapaxes(a, 0, 1).reshape(lead + (L,) + a.shape[2:])

    def backward(gy):
        gy = np.ascontiguousarray(np.swapaxes(gy.reshape(-1, L, d_inner), 0, 1))
        gC = np.matmul(hs, gy[..., None])[..., 0]
        gD = (gy * ud).reshape(-1, d_inner).sum(axis=0)
        gH = Cm[..., None] * gy[:, :, None, :]
        for t in range(L - 2, -1, -1):
            gH[t] += gH[t + 1] * abar[t + 1]
        g_abar = np.zeros_like(hs)  # gradient w.r.t. delta * A
        g_abar[1:] = gH[1:] * hs[:-1] * abar[1:]
        gHB = np.matmul(Bm[:, :, None, :], gH)[:, :, 0, :]
        g_delta = (g_abar * A).sum(axis=-2) + gHB * ud
        gu = gy * D.data + gHB * delta
        gB = np.matmul(gH, du[..., None])[..., 0]
        gA = (g_abar * delta[:, :, None, :]).reshape(-1, d_state, d_inner).sum(axis=0)
        gz = g_delta * _sigmoid(z)
        gdl = gz.sum(axis=-1, keepdims=True)
        gbcd = np.concatenate([gB, gC, gdl], axis=-1)
        return (from_step_major(gu), from_step_major(gbcd), (gA * A).T,
                gz.reshape(-1, d_inner).sum(axis=0), gD)

    return Tensor._from_op(from_step_major(y), (u, bcd, A_log, dt_bias, D), backward)


def selective_scan_fast(u: Tensor, p: Scope, trace: list | None = None) -> Tensor:
    bcd = ops.linear(u, p["x_proj"])
    return scan(u, bcd, p["A_log"], p["dt_bias"], p["D"], trace)


def selective_scan_ref(u: np.ndarray, p: Scope) -> np.ndarray:
    """Step-by-step recurrence on one sequence u [L, d_inner]; the oracle for :func:`scan`."""
    u = np.asarray(u, dtype=np.float64)
    W = p["x_proj"].data.astype(np.float64)
    A = -np.exp(p["A_log"].data.astype(np.float64))
    dt_bias = p["dt_bias"].data.astype(np.float64)
    Dskip = p["D"].data.astype(np.float64)
    d_inner, d_state = A.shape
    h = np.zeros((d_inner, d_state))
    ys = []
    for t in range(u.shape[0]):
        proj = W @ u[t]
        B_t, C_t, dl_t = proj[:d_state], proj[d_state:2 * d_state], proj[2 * d_state]
        v = dl_t + dt_bias
        delta = np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))
        abar = np.exp(delta[:, None] * A)
        h = abar * h + (delta * u[t])[:, None] * B_t[None, :]
        y = np.zeros(d_inner)
        for s in range(d_state):
            y = y + C_t[s] * h[:, s]
        ys.append(y + Dskip * u[t])
    return np.array(ys)


def mamba_block(z: Tensor, p: Scope, trace: list | None = None) -> Tensor:
    """Gated selective-scan block over axis -2 of z [..., L, d_h]."""
    d_inner = p["D"].shape[0]
    xz = ops.linear(z, p["in_proj"])
    u = ops.slice_last(xz, 0, d_inner)
    gate = ops.slice_last(xz, d_inner, 2 * d_inner)
    u = ops.silu(ops.causal_conv1d(u, p["conv_w"], p["conv_b"]))
    y = selective_scan_fast(u, p, trace)
    return ops.linear(ops.mul(y, ops.silu(gate)), p["out_proj"])


def mamba_over_axis(z: Tensor, axis: str, p: Scope, trace: list | None = None) -> Tensor:
    """Scan z [..., T, N, d_h] along time (one sequence per node) or space (one per frame)."""
    if z.ndim < 3:
        raise ShapeError(f"mamba_over_axis: expected [..., T, N, d_h], got {z.shape}")
    if axis == "space":
        return mamba_block(z, p, trace)
    if axis != "time":
        raise ValueError(f"unknown scan axis {axis!r}; expected 'time' or 'space'")
    k = z.ndim
    perm = list(range(k - 3)) + [k - 2, k - 3, k - 1]
    out = mamba_block(ops.transpose_axes(z, perm), p, trace)
    return ops.transpose_axes(out, perm)
