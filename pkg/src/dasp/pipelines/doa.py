"""Direction-of-arrival estimation on an azimuth grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Tensor
from ..losses import bce
from ..spatial import (
    ArrayGeometry,
    ArrayObservation,
    azimuth_grid,
    correlation_feature,
    doa_labels,
    simulate_scene,
    spatial_spectrum,
)
from .common import Standardizer, fit_minibatches, mlp
from .synth import Dataset

METHODS = ("spatial_spectrum", "correlation", "network")


def grid_azimuths(grid) -> np.ndarray:
    """Azimuth in degrees, in ``[0, 360)``, of each grid direction."""
    g = np.asarray(grid, dtype=float)
    return np.round(np.degrees(np.arctan2(g[:, 1], g[:, 0])), 9) % 360


def angular_error(a_deg, b_deg) -> np.ndarray:
    """Absolute circular difference in degrees."""
    d = (np.asarray(a_deg, float) - np.asarray(b_deg, float)) % 360
    return np.minimum(d, 360 - d)


def circular_peaks(values, n: int | None = None) -> np.ndarray:
    """Indices of circular local maxima, strongest first."""
    v = np.asarray(values, dtype=float)
    left, right = np.roll(v, 1), np.roll(v, -1)
    idx = np.flatnonzero((v > left) & (v >= right))
    idx = idx[np.argsort(-v[idx], kind="stable")]
    return idx if n is None else idx[:n]


@dataclass
class DoaResult:
    """``posterior`` is ``J x T`` with columns summing to one (zero columns stay zero)."""

    posterior: np.ndarray
    grid: np.ndarray

    @property
    def frame_argmax(self) -> np.ndarray:
        return np.argmax(self.posterior, axis=0)

    @property
    def summary(self) -> np.ndarray:
        return self.posterior.mean(axis=1)

    @property
    def azimuth(self) -> float:
        """Azimuth in degrees of the maximum of the time-averaged posterior."""
        return float(grid_azimuths(self.grid)[np.argmax(self.summary)])

    def peaks(self, n: int) -> np.ndarray:
        """Azimuths in degrees of the ``n`` strongest circular maxima of the summary."""
        return grid_azimuths(self.grid)[circular_peaks(self.summary, n)]


def _normalize_columns(s: np.ndarray) -> np.ndarray:
    s = np.maximum(s, 0.0)
    tot = s.sum(axis=0, keepdims=True)
    return np.divide(s, tot, out=np.zeros_like(s), where=tot > 0)


def estimate_doa(
    obs: ArrayObservation,
    geometry: ArrayGeometry,
    method: str = "spatial_spectrum",
    grid=None,
    block: int = 50,
    network: "DoaNetwork | None" = None,
    bins=None,
) -> DoaResult:
    """Per-frame direction posterior from a multichannel observation.

    ``spatial_spectrum`` is the delay-and-sum scan of the block covariance,
    ``correlation`` the PHAT-weighted steered correlation (negative values
    clipped) and ``network`` a fitted :class:`DoaNetwork`.
    """
    grid = azimuth_grid() if grid is None else np.asarray(grid, dtype=float)
    if method == "spatial_spectrum":
        s = spatial_spectrum(obs, geometry, grid, block, bins)
    elif method == "correlation":
        s = correlation_feature(obs, geometry, grid, "phat", bins)
    elif method == "network":
        if network is None:
            raise ValueError("the network method needs a fitted DoaNetwork")
        s = network.predict_scores(obs, geometry)
    else:
        raise ValueError(f"unknown DOA method {method!r}; choose from {METHODS}")
    return DoaResult(_normalize_columns(s), grid)


class DoaNetwork(BaseEstimator):
    """MLP from per-frame steered PHAT correlations to grid scores.

    Targets are smoothed grid labels ``max_q exp(-|phi_q - phi_j|^2 / sigma^2)``
    trained with BCE.
    """

    def __init__(self, n_directions: int = 72, hidden: tuple = (128,), sigma: float = 0.2, epochs: int = 20, batch_size: int = 128, lr: float = 1e-3, win_length: int = 256, hop: int = 128, patience: int = 10, seed: int = 0):
        self.n_directions = n_directions
        self.hidden = hidden
        self.sigma = sigma
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.win_length = win_length
        self.hop = hop
        self.patience = patience
        self.seed = seed

    def _features(self, obs, geometry) -> np.ndarray:
        return correlation_feature(obs, geometry, self.grid_, "phat").T

    def _scene_frames(self, scene, clip):
        obs, truth = simulate_scene(scene, self.win_length, self.hop, seed=[self.seed, 3, clip])
        feats = self._features(obs, scene.geometry)
        labels = doa_labels([truth] * len(feats), self.grid_, "smoothed", self.sigma)
        return feats, labels

    def fit(self, dataset: Dataset, train_idx=None, val_idx=None, dump_path=None):
        if not dataset.scenes:
            raise ValueError("DOA training needs array scenes")
        if train_idx is None:
            train_idx, val_idx = dataset.split()
        self.grid_ = azimuth_grid(self.n_directions)
        tr = [self._scene_frames(dataset.scenes[n], n) for n in train_idx]
        F, Y = np.vstack([t[0] for t in tr]), np.vstack([t[1] for t in tr])
        self.scaler_ = Standardizer().fit(F)
        F = self.scaler_.transform(F)
        va = [self._scene_frames(dataset.scenes[n], n) for n in val_idx] or tr
        vF, vY = self.scaler_.transform(np.vstack([t[0] for t in va])), np.vstack([t[1] for t in va])
        self.model_ = mlp([F.shape[1], *self.hidden, self.n_directions], self.seed)
        self.log_ = fit_minibatches(
            self.model_, len(F), lambda b: bce(Y[b].T, self.model_(Tensor(F[b].T))),
            lambda: {"val_loss": float(bce(vY.T, self.model_(Tensor(vF.T))).data) / len(vF)},
            self.epochs, self.batch_size, self.lr, np.random.default_rng([self.seed, 1]), self.patience, dump_path,
        )
        return self

    def predict_scores(self, obs: ArrayObservation, geometry: ArrayGeometry) -> np.ndarray:
        """``J x T`` sigmoid scores."""
        check_is_fitted(self, "model_")
        return self.model_(Tensor(self.scaler_.transform(self._features(obs, geometry)).T)).data


def evaluate_doa(dataset: Dataset, method: str = "spatial_spectrum", idx=None, network=None, win_length: int = 256, hop: int = 128) -> dict:
    """Summary-azimuth error in degrees for every scene (single-source scenes)."""
    idx = np.arange(len(dataset)) if idx is None else np.asarray(idx)
    grid = azimuth_grid() if network is None else network.grid_
    errors, estimates = [], []
    for n in idx:
        scene = dataset.scenes[n]
        obs, _ = simulate_scene(scene, win_length, hop, seed=[dataset.spec.seed, 4, int(n)])
        res = estimate_doa(obs, scene.geometry, method, grid, network=network)
        estimates.append(res.azimuth)
        errors.append(float(angular_error(res.azimuth, dataset.azimuths[n][0])))
    return {"error": np.array(errors), "estimate": np.array(estimates)}


def train_doa(dataset: Dataset, epochs: int = 20, seed: int = 0, **kwargs):
    train_idx, test_idx = dataset.split()
    model = DoaNetwork(epochs=epochs, seed=seed, **kwargs).fit(dataset, train_idx, test_idx)
    return model, evaluate_doa(dataset, "network", test_idx, model)
