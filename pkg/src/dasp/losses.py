"""Scalar loss functions built from autodiff primitives.

Every loss sums over the batch. Batches are laid out sample-first: predictions
and labels of ``N`` samples with ``L`` outputs are ``N x L`` arrays. Log-based
losses clamp probabilities to ``[EPS, 1 - EPS]`` before taking logs.
"""

from __future__ import annotations

from itertools import permutations
from typing import Callable, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    abs_,
    as_tensor,
    clip,
    concat,
    exp,
    log,
    log_softmax,
    logsigmoid,
    relu,
    sqrt,
    where,
)

EPS = 1e-12

__all__ = [
    "EPS",
    "mse",
    "l1",
    "huber",
    "regression_loss",
    "cross_entropy",
    "nll",
    "bce",
    "weighted_bce",
    "inverse_frequency_bce",
    "asymmetric_focal",
    "dice",
    "hinge_svm",
    "classification_loss",
    "clip_score",
    "super_resolution_loss",
    "contrastive",
    "triplet",
    "ntxent",
    "moco",
    "MocoDictionary",
    "ema_update",
    "embedding_loss",
    "si_sdr",
    "si_sdr_loss",
    "spectral_distance",
    "mask_bce",
    "pit_loss",
    "pit_permutations",
    "deep_clustering_loss",
    "feature_constraint_loss",
    "auc_surrogate",
]


def _pair(y, yhat) -> tuple[Tensor, Tensor]:
    y, yhat = as_tensor(y), as_tensor(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"label shape {y.shape} != prediction shape {yhat.shape}")
    if y.size == 0:
        raise ValueError("empty batch")
    return y, yhat


def _prob(p: Tensor) -> Tensor:
    return clip(p, EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# regression


def mse(y, yhat) -> Tensor:
    """``sum ||y - yhat||^2``."""
    y, yhat = _pair(y, yhat)
    e = y - yhat
    return (e * e).sum()


def l1(y, yhat) -> Tensor:
    """``sum |y - yhat|``."""
    y, yhat = _pair(y, yhat)
    return abs_(y - yhat).sum()


def huber(y, yhat, delta: float = 1.0) -> Tensor:
    """Quadratic ``e^2 / 2`` for ``|e| <= delta``, linear ``delta |e| - delta^2 / 2`` beyond."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    y, yhat = _pair(y, yhat)
    e = y - yhat
    a = abs_(e)
    quad = 0.5 * e * e
    lin = delta * a - 0.5 * delta * delta
    return where(a.data <= delta, quad, lin).sum()


def regression_loss(kind: str, y, yhat, delta: float = 1.0) -> Tensor:
    if kind == "mse":
        return mse(y, yhat)
    if kind == "l1":
        return l1(y, yhat)
    if kind == "huber":
        return huber(y, yhat, delta)
    raise ValueError(f"unknown regression loss {kind!r}")


# ---------------------------------------------------------------------------
# classification


def cross_entropy(y, yhat) -> Tensor:
    """``-sum_n y_n^T ln yhat_n`` for (soft) one-hot labels."""
    y, yhat = _pair(y, yhat)
    return -(y * log(_prob(yhat))).sum()


def nll(labels, yhat) -> Tensor:
    """``-sum_n ln yhat_n[i_n]`` with integer class indices ``i_n``."""
    yhat = as_tensor(yhat)
    labels = np.asarray(labels, dtype=int)
    if yhat.ndim != 2 or labels.shape != (yhat.shape[0],):
        raise ValueError(f"need N x L probabilities and N labels, got {yhat.shape} and {labels.shape}")
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= yhat.shape[1]:
        raise ValueError("class index out of range")
    return -log(_prob(yhat[np.arange(len(labels)), labels])).sum()


def _bce_terms(y: Tensor, yhat: Tensor) -> tuple[Tensor, Tensor]:
    p = _prob(yhat)
    return y * log(p), (1.0 - y) * log(1.0 - p)


def bce(y, yhat) -> Tensor:
    """Binary cross-entropy summed over samples and outputs."""
    y, yhat = _pair(y, yhat)
    pos, neg = _bce_terms(y, yhat)
    return -(pos + neg).sum()


def weighted_bce(y, yhat, beta: float = 1.0) -> Tensor:
    """BCE with the positive term scaled by ``beta``."""
    y, yhat = _pair(y, yhat)
    pos, neg = _bce_terms(y, yhat)
    return -(beta * pos + neg).sum()


def inverse_frequency_bce(y, yhat, c0: float = 1.0, eta: float = 1.0) -> Tensor:
    """BCE whose positive term for class ``l`` is weighted by ``(c0 / (K_l + c0))^eta``.

    ``K_l`` counts the occurrences of class ``l`` in the batch (column sums of ``y``).
    """
    if c0 < 0 or eta < 0:
        raise ValueError("c0 and eta must be non-negative")
    y, yhat = _pair(y, yhat)
    counts = y.data.reshape(-1, y.shape[-1]).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(counts + c0 > 0, (c0 / np.where(counts + c0 > 0, counts + c0, 1.0)) ** eta, 1.0)
    pos, neg = _bce_terms(y, yhat)
    return -(pos * w + neg).sum()


def asymmetric_focal(y, yhat, eta: float = 2.0) -> Tensor:
    """``-sum (1-yhat)^eta y ln yhat + yhat^eta (1-y) ln(1-yhat)``."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    y, yhat = _pair(y, yhat)
    p = _prob(yhat)
    pos, neg = _bce_terms(y, yhat)
    if eta == 0:
        return -(pos + neg).sum()
    return -((1.0 - p) ** eta * pos + p**eta * neg).sum()


def dice(y, yhat, kappa0: float = 0.0, alpha: float = 0.5, eta: float = 0.0) -> Tensor:
    """Generalized Dice loss.

    ``1 - (k0 + sum w y yhat) / (k0 + sum (1-a) y^2 + sum a w yhat^2)`` with
    ``w = (1 - yhat)^eta``. ``eta=0, a=0.5, k0=0`` gives the plain Dice loss
    ``1 - 2 sum y yhat / (sum y^2 + sum yhat^2)``.
    """
    y, yhat = _pair(y, yhat)
    w = (1.0 - yhat) ** eta if eta else 1.0
    num = kappa0 + (w * y * yhat).sum()
    den = kappa0 + ((1.0 - alpha) * y * y).sum() + (alpha * w * yhat * yhat).sum()
    if den.item() == 0:
        raise ValueError("Dice denominator is zero (all-zero labels and predictions with kappa0=0)")
    return 1.0 - num / den


def hinge_svm(y, scores, w=None, lam: float = 0.0) -> Tensor:
    """``sum max(0, 1 - y_n s_n) + lam ||w||^2`` with labels in {-1, +1}.

    ``scores`` are the raw affine outputs ``w^T z_n + b``.
    """
    y, scores = _pair(y, scores)
    if not np.all(np.isin(y.data, (-1.0, 1.0))):
        raise ValueError("hinge labels must be -1 or +1")
    loss = relu(1.0 - y * scores).sum()
    if w is not None and lam:
        w = as_tensor(w)
        loss = loss + lam * (w * w).sum()
    return loss


_CLASSIFICATION: dict[str, Callable[..., Tensor]] = {
    "ce": cross_entropy,
    "nll": nll,
    "bce": bce,
    "weighted_bce": weighted_bce,
    "ifl": inverse_frequency_bce,
    "focal_asym": asymmetric_focal,
    "dice": dice,
    "hinge_svm": hinge_svm,
}


def classification_loss(kind: str, y, yhat, **params) -> Tensor:
    try:
        fn = _CLASSIFICATION[kind]
    except KeyError:
        raise ValueError(f"unknown classification loss {kind!r}; choose from {sorted(_CLASSIFICATION)}") from None
    return fn(y, yhat, **params)


# ---------------------------------------------------------------------------
# weak labels


def clip_score(frame_probs) -> Tensor:
    """Self-weighted clip probability ``sum_t p_t^2 / sum_t p_t`` over the last axis.

    An all-zero track scores 0.
    """
    p = as_tensor(frame_probs)
    num = (p * p).sum(axis=-1)
    den = p.sum(axis=-1)
    return num / (den + (den.data == 0).astype(float))


def super_resolution_loss(frame_probs, clip_labels) -> Tensor:
    """BCE between clip labels and the self-weighted clip score of frame probabilities.

    ``frame_probs`` is ``... x L x T`` and ``clip_labels`` is ``... x L``.
    """
    return bce(clip_labels, clip_score(frame_probs))


# ---------------------------------------------------------------------------
# embeddings


def _rows(z) -> Tensor:
    z = as_tensor(z)
    return z.reshape(1, -1) if z.ndim == 1 else z


def _sqdist(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return (d * d).sum(axis=-1)


def contrastive(z_a, z_b, same, margin: float = 1.0) -> Tensor:
    """``sum p ||d||^2 + (1 - p) max(0, margin - ||d||^2)`` over pairs.

    ``same`` holds the pair indicators ``p`` (1 for a same-class pair).
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    a, b = _rows(z_a), _rows(z_b)
    p = np.atleast_1d(np.asarray(same, dtype=float))
    d2 = _sqdist(a, b)
    return (p * d2 + (1.0 - p) * relu(margin - d2)).sum()


def triplet(anchor, positive, negative, margin: float = 1.0, squared: bool = False) -> Tensor:
    """``sum max(0, margin + D+ - D-)``.

    Distances are Euclidean norms; ``squared=True`` uses squared distances.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    a, p, n = _rows(anchor), _rows(positive), _rows(negative)
    dp, dn = _sqdist(a, p), _sqdist(a, n)
    if not squared:
        dp = _safe_norm_from_sq(dp)
        dn = _safe_norm_from_sq(dn)
    return relu(margin + dp - dn).sum()


def _safe_norm_from_sq(d2: Tensor) -> Tensor:
    r = np.sqrt(d2.data)
    inv = np.where(r > 0, 0.5 / np.where(r > 0, r, 1.0), 0.0)
    return Tensor(r, _parents=(d2,), _vjp=lambda g: (g * inv,), op="norm")


def _unit(z: Tensor) -> Tensor:
    n2 = (z * z).sum(axis=-1, keepdims=True)
    if np.any(n2.data == 0):
        raise ValueError("zero-norm embedding has no cosine similarity")
    return z / sqrt(n2)


def ntxent(z, z_aug, tau: float = 1.0, alpha: float | None = None, margin: float = 0.0) -> Tensor:
    """Normalized-temperature cross-entropy over a batch of positive pairs.

    Per sample ``-ln e^{a(S_nn - m)} / (e^{a(S_nn - m)} + sum_{i != n} e^{a S_ni})``
    with cosine similarity ``S`` and scale ``a = alpha`` (default ``1 / tau``).
    With ``margin=0`` this is the softmax cross-entropy over ``S_n. / tau``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    a = 1.0 / tau if alpha is None else float(alpha)
    if a <= 0:
        raise ValueError("alpha must be positive")
    u, v = _unit(_rows(z)), _unit(_rows(z_aug))
    if u.shape != v.shape:
        raise ValueError("views must have equal shape")
    N = u.shape[0]
    logits = a * (u @ v.T) - a * margin * np.eye(N)
    lp = log_softmax(logits, axis=1)
    return -lp[np.arange(N), np.arange(N)].sum()


class MocoDictionary:
    """Ring buffer of unit-norm negative keys.

    Parameters
    ----------
    capacity : int
    dim : int
    momentum : float
        Smoothing coefficient of the key-encoder parameter average.
    """

    def __init__(self, capacity: int, dim: int, momentum: float = 0.999):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.capacity, self.dim, self.momentum = int(capacity), int(dim), float(momentum)
        self._buf = np.zeros((capacity, dim))
        self._count = 0
        self._head = 0

    def __len__(self) -> int:
        return self._count

    @property
    def keys(self) -> np.ndarray:
        return self._buf[: self._count].copy()

    def enqueue(self, keys) -> None:
        keys = np.atleast_2d(np.asarray(getattr(keys, "data", keys), dtype=float))
        if keys.shape[1] != self.dim:
            raise ValueError(f"keys must have dimension {self.dim}")
        norms = np.linalg.norm(keys, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero-norm key")
        for k in keys / norms:
            self._buf[self._head] = k
            self._head = (self._head + 1) % self.capacity
            self._count = min(self._count + 1, self.capacity)

    def update_encoder(self, key_params: Sequence[Tensor], query_params: Sequence[Tensor]) -> None:
        ema_update(key_params, query_params, self.momentum)


def ema_update(target: Sequence[Tensor], source: Sequence[Tensor], momentum: float = 0.999) -> None:
    """In place ``theta' <- m theta' + (1 - m) theta``."""
    if not 0.0 < momentum < 1.0:
        raise ValueError("momentum must lie in (0, 1)")
    for t, s in zip(target, source):
        t.data = momentum * t.data + (1.0 - momentum) * getattr(s, "data", s)


def moco(z, z_pos, negatives, tau: float = 0.07, include_positive: bool = True) -> Tensor:
    """Momentum-contrast loss ``-sum ln e^{S(z, z+)/tau} / sum e^{S(z, k)/tau}``.

    The denominator runs over the dictionary keys, plus the positive key when
    ``include_positive`` is set. ``negatives`` is a ``K x D`` array or a
    :class:`MocoDictionary`; keys are treated as constants.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    neg = negatives.keys if isinstance(negatives, MocoDictionary) else np.atleast_2d(np.asarray(negatives, float))
    if neg.size == 0:
        raise ValueError("empty dictionary")
    u, p = _unit(_rows(z)), _unit(_rows(z_pos))
    kn = _unit(Tensor(neg))
    pos = (u * p).sum(axis=1) / tau
    neg_logits = (u @ kn.T) / tau
    if include_positive:
        all_logits = concat([pos.reshape(-1, 1), neg_logits], axis=1)
        return -log_softmax(all_logits, axis=1)[:, 0].sum()
    m = neg_logits.data.max(axis=1, keepdims=True)
    lse = log(exp(neg_logits - m).sum(axis=1)) + m[:, 0]
    return -(pos - lse).sum()


def embedding_loss(kind: str, *args, **params) -> Tensor:
    table = {"contrastive": contrastive, "triplet": triplet, "ntxent": ntxent, "moco": moco}
    try:
        return table[kind](*args, **params)
    except KeyError:
        raise ValueError(f"unknown embedding loss {kind!r}") from None


# ---------------------------------------------------------------------------
# estimation


def si_sdr(s, s_hat, eps: float = EPS) -> Tensor:
    """Scale-invariant signal-to-distortion ratio in dB along the last axis.

    ``10 log10(||a s||^2 / (||a s - s_hat||^2 + eps))`` with ``a = s_hat^T s / ||s||^2``.
    """
    s, s_hat = _pair(s, s_hat)
    ss = (s * s).sum(axis=-1)
    if np.any(ss.data == 0):
        raise ValueError("zero target signal")
    alpha = (s_hat * s).sum(axis=-1) / ss
    target = alpha.reshape(alpha.shape + (1,)) * s if s.ndim > 1 else alpha * s
    err = target - s_hat
    num = (target * target).sum(axis=-1)
    den = (err * err).sum(axis=-1) + eps
    ratio = num / den
    return (10.0 / np.log(10.0)) * log(ratio + (ratio.data == 0) * 1e-300)


def si_sdr_loss(s, s_hat, eps: float = EPS) -> Tensor:
    """Negative SI-SDR summed over slices."""
    return -si_sdr(s, s_hat, eps).sum()


def spectral_distance(mask, mag_x, mag_s) -> Tensor:
    """``sum_t || mask(t) * |X(t)| - |S(t)| ||^2``."""
    mask = as_tensor(mask)
    mag_x, mag_s = np.asarray(getattr(mag_x, "data", mag_x)), np.asarray(getattr(mag_s, "data", mag_s))
    if not (mask.shape == mag_x.shape == mag_s.shape):
        raise ValueError("mask and magnitudes must share a shape")
    if np.any(mag_x < 0) or np.any(mag_s < 0):
        raise ValueError("magnitudes must be non-negative")
    d = mask * mag_x - mag_s
    return (d * d).sum()


def mask_bce(h, h_hat) -> Tensor:
    """BCE between target and estimated gains."""
    return bce(h, h_hat)


# ---------------------------------------------------------------------------
# separation


MAX_PIT_SOURCES = 4


def pit_permutations(J: int) -> list[tuple[int, ...]]:
    if J > MAX_PIT_SOURCES:
        raise ValueError(f"exhaustive PIT supports at most {MAX_PIT_SOURCES} sources, got {J}")
    if J < 1:
        raise ValueError("need at least one source")
    return list(permutations(range(J)))


def pit_loss(pairwise) -> tuple[Tensor, tuple[int, ...]]:
    """Permutation-invariant loss over a ``J x J`` matrix of pairwise costs.

    ``pairwise[j][i]`` is the cost of matching estimate ``j`` to reference ``i``;
    entries may be Tensors. Returns ``min_p sum_j d[j][p_j]`` and the
    minimizing permutation, lexicographically first on ties.
    """
    J = len(pairwise)
    if any(len(row) != J for row in pairwise):
        raise ValueError("pairwise cost must be square")
    d = [[as_tensor(v) for v in row] for row in pairwise]
    vals = np.array([[v.item() for v in row] for row in d])
    if not np.all(np.isfinite(vals)):
        raise ValueError("pairwise costs must be finite")
    best, best_p = np.inf, None
    for p in pit_permutations(J):
        c = sum(vals[j, p[j]] for j in range(J))
        if c < best:
            best, best_p = c, p
    total = d[0][best_p[0]]
    for j in range(1, J):
        total = total + d[j][best_p[j]]
    return total, best_p


def deep_clustering_loss(V, U, variant: str = "frobenius", ridge: float = 1e-8) -> Tensor:
    """Affinity losses between embeddings ``V`` (``L x KT``) and one-hot labels ``U``.

    ``frobenius``: ``||V^T V - U^T U||^2`` evaluated as
    ``||V V^T||^2 - 2 ||V U^T||^2 + ||U U^T||^2`` to avoid the ``KT x KT`` matrices.
    ``trace``: ``L - tr[(V V^T)^-1 V U^T (U U^T)^-1 U V^T]``.
    """
    V = as_tensor(V)
    U = np.asarray(getattr(U, "data", U), dtype=float)
    if V.ndim != 2 or U.ndim != 2 or V.shape[1] != U.shape[1]:
        raise ValueError(f"V and U must be L x KT and L' x KT, got {V.shape} and {U.shape}")
    if variant == "frobenius":
        vv = V @ V.T
        vu = V @ U.T
        uu = U @ U.T
        return (vv * vv).sum() - 2.0 * (vu * vu).sum() + float((uu * uu).sum())
    if variant == "trace":
        L = V.shape[0]
        vv = V @ V.T + ridge * np.eye(L)
        uu_inv = np.linalg.inv(U @ U.T + ridge * np.eye(U.shape[0]))
        vu = V @ U.T
        # tr[A^-1 B] with A = V V^T; solve via the differentiable inverse below
        B = vu @ Tensor(uu_inv) @ vu.T
        return L - _trace_solve(vv, B)
    raise ValueError(f"unknown variant {variant!r}")


def _trace_solve(A: Tensor, B: Tensor) -> Tensor:
    """``tr(A^-1 B)`` for symmetric ``A`` with its reverse-mode rule."""
    Ainv = np.linalg.inv(A.data)
    val = float(np.trace(Ainv @ B.data))

    def vjp(g):
        gA = -g * (Ainv @ B.data @ Ainv).T
        gB = g * Ainv.T
        return gA, gB

    return Tensor(val, _parents=(A, B), _vjp=vjp, op="trace_solve")


def feature_constraint_loss(extractor, y, yhat, weights: Sequence[float] | None = None) -> Tensor:
    """``sum_k w_k ||g_k(y) - g_k(yhat)||^2`` over the extractor's layer outputs.

    ``extractor`` maps an input to a list of layer outputs (for example
    :meth:`dasp.layers.Sequential.outputs`) or is a list of callables applied
    in cascade.
    """
    if callable(extractor):
        zs, zhs = extractor(y), extractor(yhat)
    else:
        zs, zhs, a, b = [], [], as_tensor(y), as_tensor(yhat)
        for layer in extractor:
            a, b = layer(a), layer(b)
            zs.append(a)
            zhs.append(b)
    if weights is None:
        weights = [1.0] * len(zs)
    if len(weights) != len(zs):
        raise ValueError("one weight per layer output required")
    total = None
    for w, z, zh in zip(weights, zs, zhs):
        d = as_tensor(z) - as_tensor(zh)
        term = w * (d * d).sum()
        total = term if total is None else total + term
    return total


# ---------------------------------------------------------------------------
# ranking


def auc_surrogate(pos_scores, neg_scores) -> Tensor:
    """Differentiable upper bound on ``1 - AUC``.

    ``-(1/N+) sum_n f(s_n) ln sigmoid(s_n - 1) - (1/N-) sum_m [1 - t(s_m)] ln(1 - sigmoid(s_m))``
    where ``f(s_n)`` is the fraction of negatives scoring above ``s_n`` and
    ``1 - t(s_m)`` the fraction of positives scoring below ``s_m``. The
    weights are computed from the batch and held constant for the gradient.
    """
    sp, sn = as_tensor(pos_scores).reshape(-1), as_tensor(neg_scores).reshape(-1)
    if sp.size == 0 or sn.size == 0:
        raise ValueError("need at least one positive and one negative score")
    f = (sn.data[None, :] > sp.data[:, None]).mean(axis=1)
    one_minus_t = (sp.data[None, :] < sn.data[:, None]).mean(axis=1)
    pos_term = -(f * logsigmoid(sp - 1.0)).sum() * (1.0 / sp.size)
    neg_term = -(one_minus_t * logsigmoid(-sn)).sum() * (1.0 / sn.size)
    return pos_term + neg_term
