"""Permutation-invariant mask estimation for multi-source separation."""

from __future__ import annotations

from itertools import permutations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Tensor
from ..dsp import ideal_masks, istft, stft
from ..losses import pit_loss, spectral_distance
from .common import Standardizer, context_stack, fit_minibatches, log_power, mlp
from .denoise import si_sdr_db
from .synth import Dataset


def best_permutation_si_sdr(references, estimates) -> tuple[np.ndarray, tuple[int, ...]]:
    """Per-reference SI-SDR under the estimate ordering that maximizes the mean."""
    J = len(references)
    table = np.array([[si_sdr_db(references[i], estimates[j]) for i in range(J)] for j in range(J)])
    best = max(permutations(range(J)), key=lambda p: sum(table[p[i], i] for i in range(J)))
    return np.array([table[best[i], i] for i in range(J)]), best


class Separator(BaseEstimator):
    """Predict one magnitude mask per source from context log-power frames.

    The training loss is utterance-level PIT over the pairwise spectral
    distances ``|| m_j |X| - |S_i| ||^2``.
    """

    def __init__(
        self,
        n_sources: int = 2,
        context: int = 2,
        hidden: tuple = (128, 128),
        epochs: int = 20,
        batch_size: int = 8,
        lr: float = 1e-3,
        win_length: int = 256,
        hop: int = 128,
        patience: int = 10,
        seed: int = 0,
    ):
        self.n_sources = n_sources
        self.context = context
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.win_length = win_length
        self.hop = hop
        self.patience = patience
        self.seed = seed

    def _spec(self, x, rate):
        return stft(x, self.win_length, self.hop, rate=rate)

    def _clip(self, dataset: Dataset, n):
        rate = dataset.spec.rate
        X = self._spec(dataset.inputs[n], rate)
        S = np.stack([self._spec(s, rate).magnitude for s in dataset.targets[n]])
        return context_stack(log_power(X.magnitude), self.context), X.magnitude, S

    def _clip_loss(self, out: Tensor, mag_x, mag_s):
        K, J = mag_x.shape[1], self.n_sources
        masks = [out[j * K : (j + 1) * K] for j in range(J)]
        pairwise = [[spectral_distance(masks[j], mag_x.T, mag_s[i].T) for i in range(J)] for j in range(J)]
        return pit_loss(pairwise)

    def fit(self, dataset: Dataset, train_idx=None, val_idx=None, dump_path=None):
        if dataset.targets is None or dataset.targets.shape[1] != self.n_sources:
            raise ValueError(f"separator expects {self.n_sources} stems per mixture")
        if train_idx is None:
            train_idx, val_idx = dataset.split()
        self.rate_ = dataset.spec.rate
        clips = [self._clip(dataset, n) for n in train_idx]
        vclips = [self._clip(dataset, n) for n in val_idx]
        self.scaler_ = Standardizer().fit(np.vstack([c[0] for c in clips]))
        K = clips[0][1].shape[1]
        self.model_ = mlp([clips[0][0].shape[1], *self.hidden, self.n_sources * K], self.seed)

        def total_loss(items):
            feats = np.vstack([c[0] for c in items])
            out = self.model_(Tensor(self.scaler_.transform(feats).T))
            loss, start = None, 0
            for _, mx, ms in items:
                T = mx.shape[0]
                value, _ = self._clip_loss(out[:, start : start + T], mx, ms)
                loss = value if loss is None else loss + value
                start += T
            return loss

        def validate():
            items = vclips or clips
            return {"val_loss": float(total_loss(items).data) / len(items)}

        self.log_ = fit_minibatches(
            self.model_, len(clips), lambda b: total_loss([clips[i] for i in b]), validate,
            self.epochs, self.batch_size, self.lr, np.random.default_rng([self.seed, 1]), self.patience, dump_path,
        )
        return self

    def predict_masks(self, x) -> np.ndarray:
        """``J x T x K`` masks for a mixture."""
        check_is_fitted(self, "model_")
        X = self._spec(np.asarray(x, float), self.rate_)
        out = self.model_(Tensor(self.scaler_.transform(context_stack(log_power(X.magnitude), self.context)).T)).data
        return out.reshape(self.n_sources, X.n_bins, -1).transpose(0, 2, 1)

    def separate(self, x) -> np.ndarray:
        """``J x L`` source estimates."""
        x = np.asarray(x, float)
        X = self._spec(x, self.rate_)
        return np.stack([istft(X, m) for m in self.predict_masks(x)])

    def pit_value(self, dataset: Dataset, idx=None) -> float:
        """Mean utterance-level PIT loss over the given clips."""
        check_is_fitted(self, "model_")
        idx = np.arange(len(dataset)) if idx is None else idx
        vals = []
        for n in idx:
            f, mx, ms = self._clip(dataset, n)
            out = self.model_(Tensor(self.scaler_.transform(f).T))
            vals.append(float(self._clip_loss(out, mx, ms)[0].data))
        return float(np.mean(vals))

    def evaluate(self, dataset: Dataset, idx=None) -> dict:
        """Per-clip, per-source SI-SDR under the best permutation."""
        idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
        scores, perms = [], []
        for n in idx:
            s, p = best_permutation_si_sdr(dataset.targets[n], self.separate(dataset.inputs[n]))
            scores.append(s)
            perms.append(p)
        return {"si_sdr": np.array(scores), "permutation": perms}


def ideal_mask_separation(mixture, stems, rate, win_length: int = 256, hop: int = 128) -> np.ndarray:
    """Oracle resynthesis with power-ratio masks of the true stems."""
    X = stft(mixture, win_length, hop, rate=rate)
    masks = ideal_masks(np.stack([stft(s, win_length, hop, rate=rate).power for s in stems]))
    return np.stack([istft(X, m) for m in masks])


def train_separator(dataset: Dataset, hidden=(128, 128), epochs: int = 20, seed: int = 0, **kwargs):
    train_idx, test_idx = dataset.split()
    model = Separator(n_sources=dataset.spec.n_sources, hidden=hidden, epochs=epochs, seed=seed, **kwargs)
    model.fit(dataset, train_idx, test_idx)
    return model, {"pit_loss": model.pit_value(dataset, test_idx), **model.evaluate(dataset, test_idx)}
