"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d fn / d arr by central differences; ``arr`` is perturbed in place and restored."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8,
                   normwise: bool = False) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor), or ||a - n|| / max(||a||, ||n||, floor)."""
    if normwise:
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
        return float(np.linalg.norm(analytic - numeric) / denom)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(loss_fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              floor: float = 1e-8, normwise: bool = False) -> list[float]:
    """Compare backprop gradients of ``loss_fn()`` against finite differences.

    Returns one relative error per input tensor.
    """
    for t in inputs:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    errors = []
    for t, a in zip(inputs, analytic):
        num = numerical_grad(lambda: float(loss_fn().data), t.data, h)
        errors.append(relative_error(a, num, floor, normwise))
    return errors
