"""Differentiable primitives.

Shapes must match exactly. The only broadcasting allowed is a trailing-axis
operand (bias, LayerNorm gain, attention vectors) or a python scalar.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, as_tensor


class DegenerateNeighborhoodError(ValueError):
    """A softmax row has no admissible entry."""


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _trailing_ok(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


def _binary_shapes(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape:
        return
    if _trailing_ok(a.shape, b.shape):
        return
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._from_op(a.data + b, (a,), lambda g: (g,))
    b = as_tensor(b)
    if a.shape != b.shape and _trailing_ok(b.shape, a.shape):
        a, b = b, a
    _binary_shapes(a, b, "add")
    sb = b.shape
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, sb)))


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    return add(a, neg(as_tensor(b)))


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._from_op(a.data * b, (a,), lambda g: (g * b,))
    b = as_tensor(b)
    if a.shape != b.shape and _trailing_ok(b.shape, a.shape):
        a, b = b, a
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _reduce_to(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is [out, in]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd.T
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched product over matching leading axes: [..., m, k] x [..., k, n]."""
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return Tensor._from_op(ad @ bd, (a, b), backward)


def pairwise_add(a: Tensor, b: Tensor) -> Tensor:
    """out[..., i, j] = a[..., i] + b[..., j]."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"pairwise_add: leading shapes differ {a.shape} vs {b.shape}")
    out = a.data[..., :, None] + b.data[..., None, :]
    return Tensor._from_op(out, (a, b), lambda g: (g.sum(axis=-1), g.sum(axis=-2)))


# ---------------------------------------------------------------- structure

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),))


def transpose_axes(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"transpose_axes: {perm} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(perm))
    out = np.ascontiguousarray(np.transpose(x.data, perm))
    return Tensor._from_op(out, (x,), lambda g: (np.transpose(g, inv),))


def concat_last_axis(xs: Sequence[Tensor]) -> Tensor:
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_last_axis: leading shapes differ {xs[0].shape} vs {t.shape}")
    cuts = np.cumsum([t.shape[-1] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=-1))

    return Tensor._from_op(np.concatenate([t.data for t in xs], axis=-1), tuple(xs), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return Tensor._from_op(x.data[..., start:stop], (x,), backward)


def take_rows(table: Tensor, idx) -> Tensor:
    """Row lookup ``table[idx]`` with scatter-add backward."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError("take_rows: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"take_rows: index out of range for table with {table.shape[0]} rows")
    src = table.shape

    def backward(g):
        full = np.zeros(src, dtype=g.dtype)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, src[-1]))
        return (full,)

    return Tensor._from_op(table.data[idx], (table,), backward)


# ---------------------------------------------------------------- elementwise

def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _softplus(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0) + np.log1p(np.exp(-np.abs(v)))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    xd = x.data
    return Tensor._from_op(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),))


def softplus(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor._from_op(_softplus(x.data), (x,), lambda g: (g * s,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,))


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * sign,))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    src = x.shape
    if axis is None:
        return Tensor._from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, src).copy(),))
    ax = axis % x.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), src).copy(),)

    return Tensor._from_op(x.data.sum(axis=ax), (x,), backward)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# ---------------------------------------------------------------- fused

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last dim {d}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                     - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        return gx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return Tensor._from_op(xhat * gd + beta.data, (x, gamma, beta), backward)


def softmax_masked(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0.

    ``mask`` has the shape of ``logits`` or a trailing part of it.
    """
    mask = np.asarray(mask, dtype=bool)
    if not _trailing_ok(logits.shape, mask.shape):
        raise ShapeError(f"softmax_masked: mask {mask.shape} does not fit logits {logits.shape}")
    if not np.all(mask.any(axis=-1)):
        raise DegenerateNeighborhoodError("softmax_masked: a row has no unmasked entry")
    m = np.broadcast_to(mask, logits.shape)
    z = np.where(m, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(p.astype(logits.dtype, copy=False), (logits,), backward)


def causal_conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Depthwise causal convolution along axis -2.

    ``x`` is [..., L, C], ``w`` is [C, K] with ``w[:, K-1]`` applied to the
    current step, ``b`` is [C].
    """
    c, k = w.shape
    if x.shape[-1] != c or b.shape != (c,):
        raise ShapeError(f"causal_conv1d: input {x.shape}, weight {w.shape}, bias {b.shape}")
    L = x.shape[-2]
    xd, wd = x.data, w.data
    pad = [(0, 0)] * (xd.ndim - 2) + [(k - 1, 0), (0, 0)]
    xp = np.pad(xd, pad)
    out = np.broadcast_to(b.data, xd.shape).copy()
    for j in range(k):
        out += xp[..., j:j + L, :] * wd[:, j]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for j in range(k):
            gxp[..., j:j + L, :] += g * wd[:, j]
            gw[:, j] = (g * xp[..., j:j + L, :]).reshape(-1, c).sum(axis=0)
        return gxp[..., k - 1:, :], gw, g.reshape(-1, c).sum(axis=0)

    return Tensor._from_op(out, (x, w, b), backward)


def check_scalar(t: Tensor) -> None:
    if t.data.size != 1:
        raise ContractError(f"expected a scalar, got shape {t.shape}")
