"""Batch/layer normalization and dropout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, sqrt

__all__ = ["NormState", "normalize", "dropout"]

RUNNING_DECAY = 0.9


@dataclass
class NormState:
    """Parameters and statistics of one normalization layer.

    ``kind="batch"`` normalizes every feature position with statistics shared
    across the leading batch axis; ``gamma``/``beta`` have the shape of one
    sample.  ``kind="layer"`` normalizes along the last (time) axis of each
    sample; ``gamma``/``beta`` have shape ``(Q, 1)``.
    """

    kind: Literal["batch", "layer"]
    gamma: Tensor
    beta: Tensor
    eps: float = 1e-5
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    decay: float = RUNNING_DECAY
    _seen: bool = field(default=False, repr=False)

    @classmethod
    def create(cls, kind: str, shape: tuple[int, ...], eps: float = 1e-5) -> "NormState":
        """Fresh state with unit scale and zero shift.

        ``shape`` is one sample's feature shape for the batch kind and the
        feature count ``Q`` (as a 1-tuple) for the layer kind.
        """
        if kind == "batch":
            pshape = tuple(shape)
        elif kind == "layer":
            pshape = (shape[0], 1)
        else:
            raise ValueError(f"unknown normalization kind {kind!r}")
        state = cls(kind, Tensor(np.ones(pshape), requires_grad=True), Tensor(np.zeros(pshape), requires_grad=True), eps)
        if kind == "batch":
            state.running_mean = np.zeros(pshape)
            state.running_var = np.ones(pshape)
        return state

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def normalize(x, state: NormState, mode: Literal["train", "infer"] = "train") -> Tensor:
    x = as_tensor(x)
    if state.kind == "layer":
        mu = x.mean(axis=-1, keepdims=True)
        d = x - mu
        var = (d * d).mean(axis=-1, keepdims=True)
        return d / sqrt(var + state.eps) * state.gamma + state.beta

    if x.shape[1:] != state.gamma.shape:
        raise ShapeError(f"batch norm expects samples of shape {state.gamma.shape}, got {x.shape[1:]}")
    if mode == "infer":
        scale = 1.0 / np.sqrt(state.running_var + state.eps)
        return (x - state.running_mean) * scale * state.gamma + state.beta
    if x.shape[0] < 2:
        raise ValueError("batch normalization in train mode needs at least 2 samples")
    mu = x.mean(axis=0)
    d = x - mu
    var = (d * d).mean(axis=0)
    if state._seen:
        state.running_mean = state.decay * state.running_mean + (1 - state.decay) * mu.data
        state.running_var = state.decay * state.running_var + (1 - state.decay) * var.data
    else:
        state.running_mean = mu.data.copy()
        state.running_var = var.data.copy()
        state._seen = True
    return d / sqrt(var + state.eps) * state.gamma + state.beta


def dropout(x, rate: float, rng: np.random.Generator | None = None, mode: str = "train") -> Tensor:
    """Zero each element with probability ``rate`` and rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))
