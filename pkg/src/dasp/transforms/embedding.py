"""Low-dimensional embeddings: classical MDS, locally linear embedding and t-SNE.

Coordinates are returned as ``L x N`` matrices, one column per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.neighbors import NearestNeighbors
from sklearn.utils.validation import check_array

__all__ = [
    "EmbeddingResult",
    "mds_embed",
    "lle_weights",
    "lle_embed",
    "conditional_probabilities",
    "tsne_objective",
    "tsne_gradient",
    "tsne_embed",
    "ClassicalMDS",
    "LocallyLinearEmbedding",
    "TSNE",
    "save_embedding",
]


@dataclass(frozen=True)
class EmbeddingResult:
    coords: np.ndarray  # L x N
    method: str
    history: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.coords)):
            raise FloatingPointError("embedding has non-finite coordinates")


def _squared_distances(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sq = np.sum(X**2, axis=1)
    return np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)


# MDS


def mds_embed(D, n_components: int = 2, gram_scale: float = -0.5) -> EmbeddingResult:
    """Classical scaling of squared distances ``D``: ``Y = sqrt(Lambda_L) U_L^T`` of ``gram_scale * Q D Q``.

    The default ``-1/2`` turns squared distances into a Gram matrix. Negative
    eigenvalues are truncated to zero; if fewer than ``n_components`` are
    positive the extra rows are zero and ``info["padded"]`` is set.
    """
    D = np.asarray(D, dtype=float)
    N = D.shape[0]
    if D.shape != (N, N) or not np.allclose(D, D.T, atol=1e-12 * max(1.0, np.abs(D).max())):
        raise ValueError("distance matrix must be square and symmetric")
    if np.any(np.abs(np.diag(D)) > 1e-12 * max(1.0, np.abs(D).max())):
        raise ValueError("distance matrix must have a zero diagonal")
    Q = np.eye(N) - np.ones((N, N)) / N
    B = gram_scale * Q @ D @ Q.T
    vals, vecs = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(vals)[::-1][:n_components]
    lam = np.clip(vals[order], 0.0, None)
    tol = 1e-12 * max(1.0, np.abs(vals).max())
    n_pos = int(np.sum(vals > tol))
    lam[lam <= tol] = 0.0
    Y = np.sqrt(lam)[:, None] * vecs[:, order].T
    return EmbeddingResult(Y, "mds", info={"eigenvalues": vals[order], "padded": n_pos < n_components})


# LLE


def _neighbors(X, k):
    nn = NearestNeighbors(n_neighbors=k + 1).fit(X)
    _, idx = nn.kneighbors(X)
    # drop self; if duplicates put another index first, remove the sample itself wherever it is
    out = np.empty((len(X), k), dtype=int)
    for n, row in enumerate(idx):
        row = row[row != n][:k]
        out[n] = row
    return out


def lle_weights(X, n_neighbors: int, eps: float = 1e-3, constrained: bool = True):
    """Reconstruction weights ``N x K`` and neighbour indices.

    ``constrained`` solves ``h = Phi^{-1} 1 / (1^T Phi^{-1} 1)`` with the local
    Gram ``Phi = (x 1^T - X_n)^T (x 1^T - X_n)``; otherwise
    ``h = (X_n^T X_n + eps I)^{-1} X_n^T x``. The ridge is ``eps`` times the
    Gram trace (``eps`` itself when the trace is zero).
    """
    X = check_array(X)
    N = len(X)
    if not 1 <= n_neighbors < N:
        raise ValueError("need 1 <= n_neighbors < N")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    idx = _neighbors(X, n_neighbors)
    W = np.zeros((N, n_neighbors))
    for n in range(N):
        nb = X[idx[n]].T  # M x K
        if constrained:
            diff = X[n][:, None] - nb
            G = diff.T @ diff
        else:
            G = nb.T @ nb
        tr = np.trace(G)
        G = G + (eps * tr if tr > 0 else eps) * np.eye(n_neighbors)
        if np.linalg.matrix_rank(G) < n_neighbors:
            raise np.linalg.LinAlgError(f"neighbour Gram of sample {n} is rank deficient; increase eps")
        if constrained:
            h = np.linalg.solve(G, np.ones(n_neighbors))
            W[n] = h / h.sum()
        else:
            W[n] = np.linalg.solve(G, nb.T @ X[n])
    return W, idx


def lle_embed(X, n_neighbors: int = 10, eps: float = 1e-3, n_components: int = 2, constrained: bool = True) -> EmbeddingResult:
    """Rows of ``Y`` are eigenvectors of ``(I - H)(I - H)^T`` with the smallest eigenvalues.

    The constant eigenvector (eigenvalue 0 when weights sum to one) is skipped
    in the constrained variant.
    """
    X = check_array(X)
    N = len(X)
    W, idx = lle_weights(X, n_neighbors, eps, constrained)
    H = np.zeros((N, N))
    for n in range(N):
        H[idx[n], n] = W[n]
    M = (np.eye(N) - H) @ (np.eye(N) - H).T
    vals, vecs = np.linalg.eigh(M)
    start = 1 if constrained else 0
    if n_components + start > N:
        raise ValueError("too many components for the sample count")
    Y = vecs[:, start : start + n_components].T
    return EmbeddingResult(Y, "lle", info={"eigenvalues": vals[start : start + n_components], "weights": W, "neighbors": idx, "matrix": M})


# t-SNE


def _sigma_for_perplexity(d2_row, perplexity, tol=1e-10, iters=100):
    target = np.log(perplexity)
    lo, hi = 0.0, np.inf
    beta = 1.0  # 1 / (2 sigma^2)
    for _ in range(iters):
        w = np.exp(-(d2_row - d2_row.min()) * beta)
        p = w / w.sum()
        H = -np.sum(p[p > 0] * np.log(p[p > 0]))
        if abs(H - target) < tol:
            break
        if H > target:
            lo = beta
            beta = beta * 2 if hi == np.inf else (beta + hi) / 2
        else:
            hi = beta
            beta = (beta + lo) / 2
    return np.sqrt(1 / (2 * beta))


def conditional_probabilities(d2, sigma=None, perplexity: float | None = None):
    """``P[k, n] = p_{k|n}``: Gaussian neighbourhood of sample ``n`` with width ``sigma_n``.

    Columns sum to one and the diagonal is zero. Give ``sigma`` (scalar or per
    point) or a target ``perplexity`` for a per-point binary search.
    """
    d2 = np.asarray(d2, dtype=float)
    N = d2.shape[0]
    if sigma is None:
        perplexity = perplexity or min(30.0, (N - 1) / 3)
        off = ~np.eye(N, dtype=bool)
        sigma = np.array([_sigma_for_perplexity(d2[n][off[n]], perplexity) for n in range(N)])
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (N,))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    logits = -d2 / (2 * sigma[None, :] ** 2)
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=0, keepdims=True)
    P = np.exp(logits)
    return P / P.sum(axis=0, keepdims=True), sigma


def _kernel(Y, dof):
    t2 = _squared_distances(Y.T)
    return t2, 1.0 / (1.0 + t2 / dof)


def _q(Y, dof, mode):
    N = Y.shape[1]
    t2, inv = _kernel(Y, dof)
    w = inv ** ((dof + 1) / 2)
    np.fill_diagonal(w, 0.0)
    if mode == "density":
        # unnormalized Student-t density
        from scipy.special import gammaln

        c = np.exp(gammaln((dof + 1) / 2) - gammaln(dof / 2)) / np.sqrt(np.pi * dof)
        return c * w, inv
    if mode == "conditional":
        return w / w.sum(axis=0, keepdims=True), inv
    if mode == "joint":
        return w / w.sum(), inv
    raise ValueError(f"unknown q mode {mode!r}")


def _target(P, mode):
    if mode == "joint":
        N = P.shape[0]
        return (P + P.T) / (2 * N)
    return P


def tsne_objective(Y, P, dof: float = 1.0, mode: str = "conditional") -> float:
    """``sum p ln(p / q)`` over off-diagonal pairs (up to the constant entropy of ``p`` in density mode)."""
    Pt = _target(P, mode)
    Q, _ = _q(Y, dof, mode)
    off = ~np.eye(P.shape[0], dtype=bool) & (Pt > 0)
    return float(np.sum(Pt[off] * (np.log(Pt[off]) - np.log(Q[off]))))


def tsne_gradient(Y, P, dof: float = 1.0, mode: str = "conditional") -> np.ndarray:
    """Gradient of :func:`tsne_objective` with respect to the ``L x N`` coordinates.

    ``density``: ``((dof + 1) / dof) sum_n (p_{m|n} + p_{n|m}) (1 + t^2/dof)^{-1} (y_m - y_n)``;
    ``conditional`` subtracts ``q_{m|n} + q_{n|m}`` inside the sum; ``joint`` uses
    ``2 (dof + 1) / dof`` times ``(P - Q)`` on the symmetrized target.
    """
    Q, inv = _q(Y, dof, mode)
    Pt = _target(P, mode)
    if mode == "density":
        coef = Pt + Pt.T
        scale = (dof + 1) / dof
    elif mode == "conditional":
        coef = Pt + Pt.T - Q - Q.T
        scale = (dof + 1) / dof
    else:
        coef = Pt - Q
        scale = 2 * (dof + 1) / dof
    Wm = scale * coef * inv
    np.fill_diagonal(Wm, 0.0)
    # sum_n Wm[m, n] (y_m - y_n)
    return Y * Wm.sum(axis=1)[None, :] - Y @ Wm.T


def tsne_embed(
    X=None,
    distances=None,
    n_components: int = 2,
    dof: float = 1.0,
    sigma=None,
    perplexity: float | None = None,
    n_iter: int = 500,
    step: float | None = None,
    momentum: float = 0.5,
    mode: str = "conditional",
    rng=None,
) -> EmbeddingResult:
    """Gradient descent with momentum, ``y <- y - step * grad + momentum * (y - y_prev)``.

    Give samples ``X`` (rows) or squared ``distances``. The objective is
    recorded every iteration; a non-finite value aborts with its index.
    """
    if (X is None) == (distances is None):
        raise ValueError("give exactly one of X or distances")
    d2 = _squared_distances(check_array(X)) if distances is None else np.asarray(distances, dtype=float)
    N = d2.shape[0]
    if n_components >= N:
        raise ValueError("embedding dimension must be below the sample count")
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    P, sig = conditional_probabilities(d2, sigma, perplexity)
    rng = np.random.default_rng(rng)
    Y = 1e-2 * rng.standard_normal((n_components, N))
    if step is None:
        step = 1.0 / N if mode != "joint" else 100.0
    prev = Y.copy()
    history = []
    for it in range(n_iter):
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            g = tsne_gradient(Y, P, dof, mode)
            Y, prev = Y - step * g + momentum * (Y - prev), Y
            obj = tsne_objective(Y, P, dof, mode) if np.all(np.isfinite(Y)) else np.nan
        if not np.isfinite(obj) or not np.all(np.isfinite(Y)):
            raise FloatingPointError(f"t-SNE objective became non-finite at iteration {it}")
        history.append(obj)
    return EmbeddingResult(Y, "tsne", history, {"P": P, "sigma": sig, "mode": mode})


def save_embedding(path, result: EmbeddingResult) -> None:
    """CSV scatter table ``id, y1, y2, ...``."""
    Y = result.coords
    header = "id," + ",".join(f"y{i + 1}" for i in range(Y.shape[0]))
    table = np.column_stack([np.arange(Y.shape[1]), Y.T])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=["%d"] + ["%.10g"] * Y.shape[0])


class _EmbeddingEstimator(BaseEstimator):
    def fit(self, X, y=None):
        self.embedding_ = self._embed(X).coords.T
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class ClassicalMDS(_EmbeddingEstimator):
    """``fit_transform(X)`` embeds rows of ``X`` (or a squared-distance matrix with ``precomputed=True``)."""

    def __init__(self, n_components: int = 2, precomputed: bool = False):
        self.n_components = n_components
        self.precomputed = precomputed

    def _embed(self, X):
        D = np.asarray(X, dtype=float) if self.precomputed else _squared_distances(check_array(X))
        return mds_embed(D, self.n_components)


class LocallyLinearEmbedding(_EmbeddingEstimator):
    def __init__(self, n_neighbors: int = 10, n_components: int = 2, eps: float = 1e-3, constrained: bool = True):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.eps = eps
        self.constrained = constrained

    def _embed(self, X):
        return lle_embed(X, self.n_neighbors, self.eps, self.n_components, self.constrained)


class TSNE(_EmbeddingEstimator):
    def __init__(self, n_components: int = 2, dof: float = 1.0, perplexity: float | None = None, n_iter: int = 500,
                 step: float | None = None, momentum: float = 0.5, mode: str = "conditional", random_state=None):
        self.n_components = n_components
        self.dof = dof
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.step = step
        self.momentum = momentum
        self.mode = mode
        self.random_state = random_state

    def _embed(self, X):
        return tsne_embed(X, n_components=self.n_components, dof=self.dof, perplexity=self.perplexity, n_iter=self.n_iter,
                          step=self.step, momentum=self.momentum, mode=self.mode, rng=self.random_state)
