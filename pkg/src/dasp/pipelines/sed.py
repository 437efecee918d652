"""Weakly supervised sound event detection with clip-level labels only."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Tensor, stack
from ..detection import AGGREGATORS, DecisionThresholds, aggregate, auc_exact, decide_matrix
from ..dsp import log_mel, mel_bank, stft
from ..losses import classification_loss
from .common import Standardizer, context_stack, fit_minibatches, mlp
from .synth import Dataset


def class_auc(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-class frame AUC; NaN for classes lacking positive or negative frames."""
    P = probs.reshape(-1, probs.shape[-1])
    Y = labels.reshape(-1, labels.shape[-1]).astype(bool)
    out = np.full(P.shape[1], np.nan)
    for c in range(P.shape[1]):
        if Y[:, c].any() and (~Y[:, c]).any():
            out[c] = auc_exact(P[Y[:, c], c], P[~Y[:, c], c])
    return out


def frame_auc(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean over classes of the pairwise AUC of frame probabilities against frame truth.

    Classes without both positive and negative frames are skipped.
    """
    aucs = class_auc(probs, labels)
    return float(np.nanmean(aucs)) if np.any(np.isfinite(aucs)) else float("nan")


class EventDetector(BaseEstimator):
    """Frame-level MLP on context log-Mel frames, trained through a pooling function.

    Frame probabilities (``T x C``) are pooled into clip probabilities with
    ``aggregation`` and compared with the clip labels by ``loss``.
    """

    def __init__(
        self,
        aggregation: str = "linear_softmax",
        loss: str = "bce",
        n_mels: int = 32,
        context: int = 1,
        hidden: tuple = (64, 64),
        epochs: int = 30,
        batch_size: int = 16,
        lr: float = 3e-3,
        win_length: int = 256,
        hop: int = 128,
        patience: int = 10,
        seed: int = 0,
    ):
        self.aggregation = aggregation
        self.loss = loss
        self.n_mels = n_mels
        self.context = context
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.win_length = win_length
        self.hop = hop
        self.patience = patience
        self.seed = seed

    def _features(self, x) -> np.ndarray:
        spec = stft(np.asarray(x, float), self.win_length, self.hop, rate=self.rate_)
        return context_stack(log_mel(spec.power, self.bank_), self.context)

    def fit(self, dataset: Dataset, train_idx=None, val_idx=None, dump_path=None):
        if self.aggregation not in AGGREGATORS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if dataset.clip_labels is None:
            raise ValueError("event detection needs clip labels")
        if train_idx is None:
            train_idx, val_idx = dataset.split()
        self.rate_ = dataset.spec.rate
        self.bank_ = mel_bank(self.n_mels, self.win_length // 2 + 1, self.rate_)
        feats = [self._features(dataset.inputs[n]) for n in range(len(dataset))]
        self.scaler_ = Standardizer().fit(np.vstack([feats[n] for n in train_idx]))
        feats = [self.scaler_.transform(f) for f in feats]
        C = dataset.clip_labels.shape[1]
        self.model_ = mlp([feats[0].shape[1], *self.hidden, C], self.seed)
        T = feats[0].shape[0]

        def clip_loss(items):
            stacked = np.vstack([feats[n] for n in items])
            out = self.model_(Tensor(stacked.T))  # C x (N T)
            clips = [aggregate(out[:, i * T : (i + 1) * T].T, self.aggregation) for i in range(len(items))]
            return classification_loss(self.loss, dataset.clip_labels[items], stack(clips, axis=0))

        val = np.asarray(val_idx if len(val_idx) else train_idx)
        self.log_ = fit_minibatches(
            self.model_, len(train_idx), lambda b: clip_loss(np.asarray(train_idx)[b]),
            lambda: {"val_loss": float(clip_loss(val).data) / len(val)},
            self.epochs, self.batch_size, self.lr, np.random.default_rng([self.seed, 1]), self.patience, dump_path,
        )
        return self

    def frame_probabilities(self, x) -> np.ndarray:
        """``T x C`` frame probabilities."""
        check_is_fitted(self, "model_")
        return self.model_(Tensor(self.scaler_.transform(self._features(x)).T)).data.T

    def predict(self, x, thresholds: DecisionThresholds = DecisionThresholds()) -> np.ndarray:
        """Binary ``T x C`` frame decisions."""
        return decide_matrix(self.frame_probabilities(x), thresholds, self.aggregation)[0]

    def evaluate(self, dataset: Dataset, idx=None) -> dict:
        idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
        probs = np.stack([self.frame_probabilities(dataset.inputs[n]) for n in idx])
        clip = np.stack([np.atleast_1d(aggregate(p, self.aggregation)) for p in probs])
        labels = dataset.frame_labels[idx]
        return {"frame_auc": frame_auc(probs, labels), "class_auc": class_auc(probs, labels), "frame_probs": probs, "clip_probs": clip}


def train_sed(dataset: Dataset, aggregation: str = "linear_softmax", loss: str = "bce", epochs: int = 30, seed: int = 0, **kwargs):
    train_idx, test_idx = dataset.split()
    model = EventDetector(aggregation=aggregation, loss=loss, epochs=epochs, seed=seed, **kwargs)
    model.fit(dataset, train_idx, test_idx)
    return model, model.evaluate(dataset, test_idx)
