"""Clip-level aggregation, frame decisions and detection metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff.tensor import Tensor, as_tensor, softmax

__all__ = [
    "AGGREGATORS",
    "aggregate",
    "DecisionThresholds",
    "decide",
    "decide_matrix",
    "Rates",
    "rates",
    "f1_score",
    "f1_from_rates",
    "auc_exact",
    "roc_points",
    "auc_trapezoid",
    "save_decisions",
    "save_roc",
]

AGGREGATORS = ("max", "mean", "top_n", "exp_sorted", "softmax_w", "linear_softmax")


def _sorted_desc(y: Tensor) -> Tensor:
    # stable: ties keep earlier frames first
    order = np.argsort(-y.data, axis=0, kind="stable")
    if y.ndim == 1:
        return y[order]
    return y[order, np.arange(y.shape[1])[None, :]]


def aggregate(probs, method: str = "linear_softmax", n: int | None = None, lam: float = 0.5, tau: float = 1.0):
    """Pool frame probabilities over time (axis 0) into clip probabilities.

    ``top_n`` averages the ``n`` largest frames; ``exp_sorted`` weights the
    sorted frames by ``lam**t`` normalized by ``(1 - lam) / (1 - lam**T)``;
    ``softmax_w`` weights by ``softmax(tau * y)``; ``linear_softmax`` is
    ``sum y^2 / sum y`` (0 for all-zero input). Tensor inputs return Tensors.
    """
    is_tensor = isinstance(probs, Tensor)
    y = as_tensor(probs)
    if y.ndim not in (1, 2) or y.shape[0] < 1:
        raise ValueError("probabilities must be T or T x L with T >= 1")
    T = y.shape[0]
    if method == "max":
        out = y.max(axis=0)
    elif method == "mean":
        out = y.mean(axis=0)
    elif method == "top_n":
        n = T if n is None else int(n)
        if not 1 <= n <= T:
            raise ValueError(f"top_n needs 1 <= n <= {T}")
        out = _sorted_desc(y)[:n].mean(axis=0)
    elif method == "exp_sorted":
        if not 0 < lam < 1:
            raise ValueError("lam must lie in (0, 1)")
        w = lam ** np.arange(T) * (1 - lam) / (1 - lam**T)
        if y.ndim == 2:
            w = w[:, None]
        out = (_sorted_desc(y) * w).sum(axis=0)
    elif method == "softmax_w":
        if tau < 0:
            raise ValueError("tau must be non-negative")
        out = (softmax(y * tau, axis=0) * y).sum(axis=0)
    elif method == "linear_softmax":
        den = y.sum(axis=0)
        safe = Tensor(np.where(den.data > 0, 0.0, 1.0))
        out = (y * y).sum(axis=0) / (den + safe)
    else:
        raise ValueError(f"unknown aggregation {method!r}; choose from {AGGREGATORS}")
    if is_tensor:
        return out
    return float(out.data) if out.ndim == 0 else out.data


@dataclass(frozen=True)
class DecisionThresholds:
    global_: float = 0.5
    low: float = 0.2
    high: float = 0.75
    min_duration: int = 5

    def __post_init__(self):
        for v in (self.global_, self.low, self.high):
            if not 0 <= v <= 1:
                raise ValueError("thresholds must lie in [0, 1]")
        if self.low > self.high:
            raise ValueError("low threshold exceeds high threshold")
        if self.min_duration < 1:
            raise ValueError("minimum duration must be at least one frame")


def _runs(mask: np.ndarray):
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return edges[::2], edges[1::2]


def decide(probs, clip_score: float, thresholds: DecisionThresholds = DecisionThresholds()) -> np.ndarray:
    """Binary frame decisions ``(p_c + p_l) * p_g``.

    ``p_g`` gates on the clip score, ``p_l`` marks frames at or above the high
    threshold and ``p_c`` marks frames in ``[low, high]`` that belong to a run
    of at least ``min_duration`` frames at or above ``low``. Frames above
    ``high`` count as run members, so a sustained run may straddle peaks.
    """
    y = np.asarray(probs, dtype=float)
    if y.ndim != 1:
        raise ValueError("decide works on a single T-vector")
    if clip_score < thresholds.global_:
        return np.zeros(len(y), dtype=int)
    local = y >= thresholds.high
    sustained = np.zeros(len(y), dtype=bool)
    for start, stop in zip(*_runs(y >= thresholds.low)):
        if stop - start >= thresholds.min_duration:
            sustained[start:stop] = True
    sustained &= y <= thresholds.high
    return (local | sustained).astype(int)


def decide_matrix(probs, thresholds: DecisionThresholds = DecisionThresholds(), method: str = "linear_softmax", **kwargs):
    """Per-class decisions for ``T x L`` probabilities using aggregated clip scores."""
    Y = np.asarray(probs, dtype=float)
    clip = np.atleast_1d(aggregate(Y, method, **kwargs))
    return np.stack([decide(Y[:, l], clip[l], thresholds) for l in range(Y.shape[1])], axis=1), clip


def _split(pos, neg):
    pos, neg = np.asarray(pos, dtype=float).ravel(), np.asarray(neg, dtype=float).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    return pos, neg


@dataclass(frozen=True)
class Rates:
    recall: float
    fpr: float
    precision: float
    pp: int
    pn: int
    np_: int
    nn: int
    no_predicted_positives: bool


def rates(pos, neg, threshold: float) -> Rates:
    """Confusion counts and rates, predicting positive when ``score >= threshold``."""
    pos, neg = _split(pos, neg)
    pp = int(np.sum(pos >= threshold))
    npos = int(np.sum(neg >= threshold))
    empty = pp + npos == 0
    precision = 1.0 if empty else pp / (pp + npos)
    return Rates(pp / pos.size, npos / neg.size, precision, pp, pos.size - pp, npos, neg.size - npos, empty)


def f1_from_rates(recall: float, fpr: float, alpha: float) -> float:
    """``2 t / (t + alpha f + 1)`` with ``alpha = N- / N+``."""
    return 2 * recall / (recall + alpha * fpr + 1)


def f1_score(pos, neg, threshold: float) -> float:
    pos, neg = _split(pos, neg)
    r = rates(pos, neg, threshold)
    return f1_from_rates(r.recall, r.fpr, neg.size / pos.size)


def auc_exact(pos, neg, tie: float = 0.5) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count ``tie``."""
    pos, neg = _split(pos, neg)
    s = np.sort(neg)
    below = np.searchsorted(s, pos, side="left")
    at_or_below = np.searchsorted(s, pos, side="right")
    return float((below.sum() + tie * (at_or_below - below).sum()) / (pos.size * neg.size))


def roc_points(pos, neg):
    """``(fpr, recall)`` pairs for thresholds at every distinct score, from ``(0, 0)`` to ``(1, 1)``."""
    pos, neg = _split(pos, neg)
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([pos, neg]))[::-1]])
    return [(r.fpr, r.recall) for r in (rates(pos, neg, e) for e in thresholds)]


def auc_trapezoid(pos, neg) -> float:
    pts = np.array(roc_points(pos, neg))
    return float(np.sum(np.diff(pts[:, 0]) * 0.5 * (pts[1:, 1] + pts[:-1, 1])))


def save_decisions(path, probs, decisions) -> None:
    """CSV rows ``frame, class, probability, decision``."""
    P, D = np.asarray(probs), np.asarray(decisions)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "class", "probability", "decision"])
        for t in range(P.shape[0]):
            for l in range(P.shape[1]):
                w.writerow([t, l, f"{P[t, l]:.6g}", int(D[t, l])])


def save_roc(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "recall"])
        w.writerows([f"{f:.10g}", f"{t:.10g}"] for f, t in points)
