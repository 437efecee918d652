"""Time-frequency gains and learned analysis/synthesis."""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import Tensor, as_tensor, matmul

__all__ = ["wiener_gain", "ideal_masks", "learned_analysis"]


def wiener_gain(signal_power, noise_power) -> np.ndarray:
    """``phi_SS / (phi_SS + phi_VV)``; zero where both powers vanish."""
    s = np.asarray(signal_power, dtype=float)
    v = np.asarray(noise_power, dtype=float)
    if np.any(s < 0) or np.any(v < 0):
        raise ValueError("powers must be non-negative")
    den = s + v
    return np.divide(s, den, out=np.zeros(np.broadcast(s, v).shape), where=den > 0)


def ideal_masks(powers, eps0: float = 0.0) -> np.ndarray:
    """``|s_j|^2 / (eps0 + sum_i |s_i|^2)`` for sources stacked on axis 0."""
    p = np.asarray(powers, dtype=float)
    if np.any(p < 0):
        raise ValueError("powers must be non-negative")
    den = eps0 + p.sum(axis=0, keepdims=True)
    return np.divide(p, den, out=np.zeros_like(p), where=den > 0)


def learned_analysis(analysis, synthesis, x, gains):
    """``synthesis @ diag(h) @ analysis^T @ x`` for each column of ``x``.

    ``analysis`` and ``synthesis`` are ``L x K``, ``x`` is ``L x T`` (or a single
    frame) and ``gains`` is ``K x T`` (or ``K``). Tensor inputs stay differentiable.
    """
    if not any(isinstance(a, Tensor) for a in (analysis, synthesis, x, gains)):
        U, Ut, xs, h = (np.asarray(a, dtype=float) for a in (analysis, synthesis, x, gains))
        if h.ndim == 1 and xs.ndim == 2:
            h = h[:, None]
        return Ut @ (h * (U.T @ xs))
    U, x, h = as_tensor(analysis), as_tensor(x), as_tensor(gains)
    if h.ndim == 1 and x.ndim == 2:
        h = h.reshape(-1, 1)
    return matmul(synthesis, matmul(U.T, x) * h)
