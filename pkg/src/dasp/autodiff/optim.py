"""Mini-batch gradient descent and Adam.

The Adam update follows the uncorrected recursion

    m_t = b1 m_{t-1} + (1 - b1) g_t
    v_t = b2 v_{t-1} + (1 - b2) g_t * g_t
    theta_t = theta_{t-1} - lr * m_t / sqrt(v_t + eps)

with no bias correction of ``m_t``/``v_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor

__all__ = ["OptimizerState", "adam_step", "sgd_step", "Adam", "SGD"]


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 <= 1 and 0 < self.beta2 <= 1):
            raise ValueError("smoothing factors must lie in (0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def _check(params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient; step rejected")


def adam_step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Return updated parameter arrays; ``state`` is advanced only on success."""
    _check(params, grads)
    m = state.m or [np.zeros_like(p) for p in params]
    v = state.v or [np.zeros_like(p) for p in params]
    new_m, new_v, new_p = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = state.beta1 * mi + (1 - state.beta1) * g
        vi = state.beta2 * vi + (1 - state.beta2) * g * g
        upd = p - state.lr * mi / np.sqrt(vi + state.eps)
        if not np.all(np.isfinite(upd)):
            raise NonFiniteError("non-finite parameter update; step rejected")
        new_m.append(mi)
        new_v.append(vi)
        new_p.append(upd)
    state.m, state.v = new_m, new_v
    state.step += 1
    return new_p


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> list[np.ndarray]:
    _check(params, grads)
    out = [p - lr * g for p, g in zip(params, grads)]
    if not all(np.all(np.isfinite(o)) for o in out):
        raise NonFiniteError("non-finite parameter update; step rejected")
    return out


class Adam:
    """Adam over a list of leaf tensors; updates ``.data`` in place."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.99, eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        new = adam_step(self.state, [p.data for p in self.params], grads)
        for p, d in zip(self.params, new):
            p.data = d


class SGD:
    def __init__(self, params: Sequence[Tensor], lr=1e-3):
        self.params = list(params)
        self.lr = lr

    def step(self, grads: Sequence[np.ndarray]) -> None:
        new = sgd_step([p.data for p in self.params], grads, self.lr)
        for p, d in zip(self.params, new):
            p.data = d
