"""Shared pieces of the recipes: features, small MLPs and the training loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..autodiff import Adam, NonFiniteError, Tensor, grad, save_tensors
from ..layers import DenseLayer, Module, Sequential

LOG_FLOOR = 1e-10


class TrainingDivergedError(RuntimeError):
    """Raised when a loss turns non-finite; ``state`` holds the last finite parameters."""

    def __init__(self, message: str, state: dict, dump_path=None):
        super().__init__(message)
        self.state = state
        self.dump_path = dump_path


def log_power(mag: np.ndarray) -> np.ndarray:
    return np.log(np.square(mag) + LOG_FLOOR)


def context_stack(features: np.ndarray, q: int) -> np.ndarray:
    """Concatenate each ``T x F`` frame with its ``q`` neighbours on both sides.

    Edges repeat the first and last frame. Returns ``T x (2q + 1) F``.
    """
    T = features.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-q, q + 1)[None], 0, T - 1)
    return features[idx].reshape(T, -1)


@dataclass
class Standardizer:
    """Per-feature mean and scale estimated on training frames."""

    mean: np.ndarray | None = None
    scale: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "Standardizer":
        self.mean = X.mean(axis=0)
        self.scale = X.std(axis=0) + 1e-8
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def mlp(sizes: Sequence[int], rng, hidden_activation: str = "relu", output_activation: str = "sigmoid") -> Sequential:
    """Dense stack ``sizes[0] -> ... -> sizes[-1]``."""
    rng = np.random.default_rng(rng)
    layers = [DenseLayer(a, b, hidden_activation, rng=rng) for a, b in zip(sizes[:-2], sizes[1:-1])]
    layers.append(DenseLayer(sizes[-2], sizes[-1], output_activation, rng=rng))
    return Sequential(layers)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, **row) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path) -> None:
        write_csv(path, self.rows)


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def fit_minibatches(
    model: Module,
    n_items: int,
    batch_loss: Callable[[np.ndarray], Tensor],
    validate: Callable[[], dict],
    epochs: int,
    batch_size: int,
    lr: float,
    rng,
    patience: int = 10,
    dump_path=None,
    log: TrainLog | None = None,
) -> TrainLog:
    """Adam over shuffled minibatches of item indices with early stopping.

    ``validate`` returns a dict that must contain ``val_loss``. The parameters
    of the epoch with the lowest validation loss are restored at the end.
    """
    rng = np.random.default_rng(rng)
    params = model.parameters()
    opt = Adam(params, lr=lr)
    log = log or TrainLog()
    best, best_state, since = np.inf, model.state_dict(), 0
    for epoch in range(int(epochs)):
        order = rng.permutation(n_items)
        total = 0.0
        for start in range(0, n_items, batch_size):
            state = model.state_dict()
            try:
                loss = batch_loss(order[start : start + batch_size])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NonFiniteError("loss")
                grads = grad(loss, params)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NonFiniteError("gradient")
                opt.step(grads)
            except NonFiniteError as exc:
                if dump_path is not None:
                    save_tensors(dump_path, state)
                raise TrainingDivergedError(f"training diverged in epoch {epoch}: {exc}", state, dump_path) from exc
            total += value
        metrics = validate()
        log.append(epoch=epoch, train_loss=total / n_items, **metrics)
        if metrics["val_loss"] < best:
            best, best_state, since = metrics["val_loss"], model.state_dict(), 0
            log.best_epoch = epoch
        else:
            since += 1
            if since >= patience:
                log.stopped_early = True
                break
    model.load_state_dict(best_state)
    return log
