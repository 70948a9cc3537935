"""Central finite-difference verification of the backward pass."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


# Extended precision keeps the difference quotient's rounding noise far below
# the 1e-8 relative-error floor for near-zero gradient entries.
ORACLE_DTYPE = np.longdouble if np.finfo(np.longdouble).eps < np.finfo(np.float64).eps else np.float64


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5, coords=None,
                   dtype=ORACLE_DTYPE) -> np.ndarray:
    x = np.array(x, dtype=dtype)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + eps
        fp = f(Tensor(x)).data.reshape(-1)[0]
        flat[i] = old - eps
        fm = f(Tensor(x)).data.reshape(-1)[0]
        flat[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad.reshape(x.shape).astype(np.float64)


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    backward(f(t))
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` must map a float64 tensor to a scalar.  With ``max_coords`` only a
    random subset of coordinates is perturbed (large parameter blocks).
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    coords = None
    if max_coords is not None and x.size > max_coords:
        coords = np.sort(np.random.default_rng(seed).choice(x.size, size=max_coords, replace=False))
    a = analytic_grad(f, x).reshape(-1)
    n = numerical_grad(f, x, eps, coords).reshape(-1)
    if coords is not None:
        a, n = a[coords], n[coords]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
