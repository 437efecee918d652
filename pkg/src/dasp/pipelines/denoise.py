"""Multi-frame MLP mask estimation for single-channel noise suppression."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Tensor
from ..dsp import istft, stft, wiener_gain
from ..losses import mask_bce, si_sdr, spectral_distance
from .common import Standardizer, context_stack, fit_minibatches, log_power, mlp
from .synth import Dataset

LOSS_KINDS = ("bce_mask", "spectral")


def si_sdr_db(reference, estimate) -> float:
    return float(si_sdr(np.asarray(reference, float), np.asarray(estimate, float)).data)


class Denoiser(BaseEstimator):
    """Estimate a Wiener-style gain per bin from ``2 * context + 1`` log-power frames.

    Training labels are the oracle gains ``|S|^2 / (|S|^2 + |V|^2)`` computed
    from the clean and noise STFTs. Inference multiplies the noisy STFT by the
    predicted gains and resynthesizes by overlap-add.
    """

    def __init__(
        self,
        context: int = 2,
        hidden: tuple = (128, 128),
        loss: str = "bce_mask",
        epochs: int = 20,
        batch_size: int = 256,
        lr: float = 1e-3,
        win_length: int = 256,
        hop: int = 128,
        patience: int = 10,
        seed: int = 0,
    ):
        self.context = context
        self.hidden = hidden
        self.loss = loss
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.win_length = win_length
        self.hop = hop
        self.patience = patience
        self.seed = seed

    # features --------------------------------------------------------------

    def _spec(self, x, rate):
        return stft(x, self.win_length, self.hop, rate=rate)

    def _features(self, spec) -> np.ndarray:
        return context_stack(log_power(spec.magnitude), self.context)

    def _frames(self, dataset: Dataset, idx):
        feats, labels, mag_x, mag_s = [], [], [], []
        rate = dataset.spec.rate
        for n in idx:
            X = self._spec(dataset.inputs[n], rate)
            S = self._spec(dataset.targets[n], rate)
            V = self._spec(dataset.noise[n], rate)
            feats.append(self._features(X))
            labels.append(wiener_gain(S.power, V.power))
            mag_x.append(X.magnitude)
            mag_s.append(S.magnitude)
        return np.vstack(feats), np.vstack(labels), np.vstack(mag_x), np.vstack(mag_s)

    def _objective(self, out, labels, mag_x, mag_s):
        if self.loss == "bce_mask":
            return mask_bce(labels, out)
        return spectral_distance(out, mag_x, mag_s)

    # API -------------------------------------------------------------------

    def fit(self, dataset: Dataset, train_idx=None, val_idx=None, dump_path=None):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss!r}; choose from {LOSS_KINDS}")
        if dataset.targets is None or dataset.noise is None:
            raise ValueError("denoiser training needs clean and noise signals")
        if train_idx is None:
            train_idx, val_idx = dataset.split()
        self.rate_ = dataset.spec.rate
        F, H, MX, MS = self._frames(dataset, train_idx)
        self.scaler_ = Standardizer().fit(F)
        F = self.scaler_.transform(F)
        K = H.shape[1]
        self.model_ = mlp([F.shape[1], *self.hidden, K], self.seed)
        vF, vH, vMX, vMS = self._frames(dataset, val_idx) if len(val_idx) else (F, H, MX, MS)
        vF = self.scaler_.transform(vF) if len(val_idx) else F

        def batch_loss(b):
            out = self.model_(Tensor(F[b].T))
            return self._objective(out, H[b].T, MX[b].T, MS[b].T)

        def validate():
            out = self.model_(Tensor(vF.T))
            val_loss = float(self._objective(out, vH.T, vMX.T, vMS.T).data) / len(vF)
            return {"val_loss": val_loss, "val_si_sdr_gain": float(np.mean(self.evaluate(dataset, val_idx)["gain"])) if len(val_idx) else 0.0}

        self.log_ = fit_minibatches(
            self.model_, len(F), batch_loss, validate, self.epochs, self.batch_size, self.lr,
            np.random.default_rng([self.seed, 1]), self.patience, dump_path,
        )
        return self

    def predict_mask(self, x) -> np.ndarray:
        """``T x K`` gains for a noisy signal."""
        check_is_fitted(self, "model_")
        spec = self._spec(np.asarray(x, float), self.rate_)
        feats = self.scaler_.transform(self._features(spec))
        return self.model_(Tensor(feats.T)).data.T

    def enhance(self, x) -> np.ndarray:
        check_is_fitted(self, "model_")
        x = np.asarray(x, float)
        spec = self._spec(x, self.rate_)
        return istft(spec, self.predict_mask(x))

    def oracle(self, clean, noise) -> np.ndarray:
        """Resynthesis with the oracle Wiener gains (no learning)."""
        rate = getattr(self, "rate_", None)
        rate = 8000.0 if rate is None else rate
        X = self._spec(np.asarray(clean) + np.asarray(noise), rate)
        S, V = self._spec(clean, rate), self._spec(noise, rate)
        return istft(X, wiener_gain(S.power, V.power))

    def evaluate(self, dataset: Dataset, idx=None) -> dict:
        """Per-clip SI-SDR of the noisy input, the enhanced output and the oracle."""
        idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
        noisy, enhanced, oracle = [], [], []
        for n in idx:
            s, x = dataset.targets[n], dataset.inputs[n]
            noisy.append(si_sdr_db(s, x))
            enhanced.append(si_sdr_db(s, self.enhance(x)))
            oracle.append(si_sdr_db(s, self.oracle(s, dataset.noise[n])))
        noisy, enhanced, oracle = map(np.array, (noisy, enhanced, oracle))
        return {"noisy": noisy, "enhanced": enhanced, "oracle": oracle, "gain": enhanced - noisy}


def train_denoiser(dataset: Dataset, context: int = 2, hidden=(128, 128), loss: str = "bce_mask", epochs: int = 20, seed: int = 0, **kwargs):
    """Fit a :class:`Denoiser` on the seeded 80/20 split; returns the model and held-out metrics."""
    train_idx, test_idx = dataset.split()
    model = Denoiser(context=context, hidden=hidden, loss=loss, epochs=epochs, seed=seed, **kwargs)
    model.fit(dataset, train_idx, test_idx)
    return model, model.evaluate(dataset, test_idx)
