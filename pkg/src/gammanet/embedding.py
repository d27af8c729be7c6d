"""Input embedding: feature, periodicity and spatio-temporal adaptive parts.

Output last-axis layout is ``[E_f | time-of-day | day-of-week | E_a]`` with
width ``3 * d_f + d_a``.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, Scope, ShapeError, Tensor, ops


def init_embedding(store: ParamStore, prefix: str, d_f: int, d_a: int, T: int, num_nodes: int,
                   steps_per_day: int, rng: np.random.Generator, dtype=np.float64) -> None:
    bound = 1.0 / np.sqrt(3.0)
    store.add(f"{prefix}.W_f", rng.uniform(-bound, bound, (d_f, 3)).astype(dtype))
    store.add(f"{prefix}.b_f", rng.uniform(-bound, bound, d_f).astype(dtype))
    store.add(f"{prefix}.T_d", (0.02 * rng.standard_normal((steps_per_day, d_f))).astype(dtype))
    store.add(f"{prefix}.T_w", (0.02 * rng.standard_normal((7, d_f))).astype(dtype))
    store.add(f"{prefix}.E_a", (0.02 * rng.standard_normal((T, num_nodes, d_a))).astype(dtype))


def embed(x: np.ndarray, p: Scope) -> Tensor:
    """Map raw inputs [..., T, N, 3] to hidden states [..., T, N, d_h].

    Channel 0 is normalized flow, channels 1 and 2 are integer time-of-day
    and day-of-week indices.
    """
    x = np.asarray(x)
    if x.ndim < 3 or x.shape[-1] != 3:
        raise ShapeError(f"embed: expected [..., T, N, 3], got {x.shape}")
    W_f, T_d, T_w, E_a = p["W_f"], p["T_d"], p["T_w"], p["E_a"]
    steps_per_day = T_d.shape[0]
    T, N = x.shape[-3], x.shape[-2]
    if T > E_a.shape[0] or N != E_a.shape[1]:
        raise ShapeError(f"embed: window {T}x{N} does not fit adaptive embedding {E_a.shape}")
    tod = np.rint(x[..., 1]).astype(np.int64)
    dow = np.rint(x[..., 2]).astype(np.int64)
    if tod.min() < 0 or tod.max() >= steps_per_day:
        raise IndexError(f"embed: time-of-day index outside [0, {steps_per_day})")
    if dow.min() < 0 or dow.max() >= 7:
        raise IndexError("embed: day-of-week index outside [0, 7)")

    dtype = W_f.dtype
    raw = np.stack([x[..., 0], tod / steps_per_day, dow / 7.0], axis=-1).astype(dtype)
    e_f = ops.linear(Tensor(raw), W_f, p["b_f"])
    e_d = ops.take_rows(T_d, tod)
    e_w = ops.take_rows(T_w, dow)
    flat = ops.reshape(E_a, (-1, E_a.shape[2]))
    pos = np.arange(T)[:, None] * N + np.arange(N)[None, :]
    e_a = ops.take_rows(flat, np.broadcast_to(pos, x.shape[:-1]))
    return ops.concat_last_axis([e_f, e_d, e_w, e_a])
