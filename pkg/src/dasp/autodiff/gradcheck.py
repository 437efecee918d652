"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad

__all__ = ["numeric_grad", "relative_error", "check_grad"]


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-6) -> list[np.ndarray]:
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = old - h
            fm = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = old
            g.reshape(-1)[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den


def check_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-6) -> float:
    """Worst relative error between tape and finite-difference gradients of ``fn``."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = grad(fn(*leaves), leaves)
    numeric = numeric_grad(fn, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
