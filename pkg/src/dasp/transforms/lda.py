"""Linear discriminant analysis from within- and between-class scatter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

__all__ = ["LdaModel", "lda_fit", "lda_apply", "scatter_matrices", "rayleigh_ratio", "LinearDiscriminant"]


@dataclass(frozen=True)
class LdaModel:
    transform: np.ndarray  # M x D, rows ordered by eigenvalue
    eigenvalues: np.ndarray
    class_means: np.ndarray
    within: np.ndarray
    between: np.ndarray
    classes: np.ndarray
    degenerate: bool


def scatter_matrices(X, labels):
    """``Phi_w = sum_k (1/N_k) sum (x - mu_k)(x - mu_k)^T`` and ``Phi_b = sum_k sum_l (mu_k - mu_l)(mu_k - mu_l)^T``."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    means = np.stack([X[labels == c].mean(axis=0) for c in classes])
    within = sum(np.cov(X[labels == c].T, bias=True).reshape(X.shape[1], X.shape[1]) for c in classes)
    diff = means[:, None, :] - means[None, :, :]
    between = np.einsum("kli,klj->ij", diff, diff)
    return within, between, means, classes


def rayleigh_ratio(A, within, between) -> float:
    A = np.atleast_2d(A)
    return float(np.trace(A @ between @ A.T) / np.trace(A @ within @ A.T))


def lda_fit(X, labels, n_components: int = 1, ridge: float | None = None) -> LdaModel:
    """Rows of the transform are the top eigenvectors of ``Phi_w^{-1} Phi_b``.

    ``ridge=None`` adds ``1e-8`` times the mean within-class variance only when
    ``Phi_w`` is singular; ``ridge=0`` rejects a singular ``Phi_w``.
    """
    X, labels = check_X_y(X, labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("LDA needs at least two classes")
    if np.any(counts < 2):
        raise ValueError("every class needs at least two samples")
    D = X.shape[1]
    if not 1 <= n_components <= D:
        raise ValueError(f"n_components must lie in [1, {D}]")
    within, between, means, classes = scatter_matrices(X, labels)
    singular = np.linalg.matrix_rank(within) < D
    if ridge is None:
        ridge = 1e-8 * max(np.trace(within) / D, 1e-300) if singular else 0.0
    elif ridge == 0 and singular:
        raise np.linalg.LinAlgError("within-class scatter is singular; pass a ridge")
    vals, vecs = scipy.linalg.eigh(between, within + ridge * np.eye(D))
    order = np.argsort(vals)[::-1][:n_components]
    A = vecs[:, order].T
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    degenerate = bool(np.allclose(between, 0))
    return LdaModel(A, vals[order], means, within, between, classes, degenerate)


def lda_apply(model: LdaModel, x) -> np.ndarray:
    """``y = A x`` for a vector, or row-wise for an ``N x D`` matrix."""
    x = np.asarray(x, dtype=float)
    return x @ model.transform.T


class LinearDiscriminant(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` then ``transform(X)`` gives ``N x n_components``."""

    def __init__(self, n_components: int = 1, ridge: float | None = None):
        self.n_components = n_components
        self.ridge = ridge

    def fit(self, X, y):
        X, y = validate_data(self, X, y)
        self.model_ = lda_fit(X, y, self.n_components, self.ridge)
        self.components_ = self.model_.transform
        self.classes_ = self.model_.classes
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return lda_apply(self.model_, X)
