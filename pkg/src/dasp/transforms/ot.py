"""Exact discrete optimal transport by the transportation simplex method.

The solver only adds, subtracts and compares, so ``fractions.Fraction``
inputs (object arrays) are solved in exact arithmetic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator

__all__ = ["TransportPlan", "ot_solve", "squared_euclidean_cost", "ot_gradient_targets", "OptimalTransport"]

MAX_SIZE = 64


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    p: np.ndarray
    q: np.ndarray
    cost_matrix: np.ndarray
    cost: object
    iterations: int


def _is_exact(*arrays) -> bool:
    return any(a.dtype == object for a in arrays)


def _prepare(C, p, q):
    arrays = [np.asarray(a) for a in (C, p, q)]
    if _is_exact(*arrays):
        return [np.vectorize(Fraction, otypes=[object])(a) for a in arrays], True
    return [a.astype(float) for a in arrays], False


def _northwest(p, q):
    K, N = len(p), len(q)
    supply, demand = list(p), list(q)
    basis = {}
    i = j = 0
    while True:
        x = min(supply[i], demand[j])
        basis[(i, j)] = x
        row_done = supply[i] <= demand[j]
        supply[i] -= x
        demand[j] -= x
        if i == K - 1 and j == N - 1:
            break
        if i == K - 1:
            j += 1
        elif j == N - 1 or row_done:
            i += 1
        else:
            j += 1
    return basis


def _potentials(C, basis, K, N):
    adj = {("r", i): [] for i in range(K)}
    adj.update({("c", j): [] for j in range(N)})
    for i, j in basis:
        adj[("r", i)].append(("c", j))
        adj[("c", j)].append(("r", i))
    u, v = [None] * K, [None] * N
    u[0] = C[0, 0] - C[0, 0]
    todo = deque([("r", 0)])
    while todo:
        kind, idx = todo.popleft()
        for nxt in adj[(kind, idx)]:
            if kind == "r" and v[nxt[1]] is None:
                v[nxt[1]] = C[idx, nxt[1]] - u[idx]
                todo.append(nxt)
            elif kind == "c" and u[nxt[1]] is None:
                u[nxt[1]] = C[nxt[1], idx] - v[idx]
                todo.append(nxt)
    return u, v, adj


def _tree_path(adj, start, goal):
    prev = {start: None}
    todo = deque([start])
    while todo:
        node = todo.popleft()
        if node == goal:
            break
        for nxt in adj[node]:
            if nxt not in prev:
                prev[nxt] = node
                todo.append(nxt)
    path = [goal]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def ot_solve(C, p, q, tol: float = 1e-12, max_iter: int | None = None) -> TransportPlan:
    """Minimize ``tr(H^T C)`` subject to ``H 1 = p``, ``H^T 1 = q``, ``H >= 0``.

    Entering and leaving cells follow Bland's smallest-index rule, which rules
    out cycling on degenerate bases.
    """
    (C, p, q), exact = _prepare(C, p, q)
    if C.ndim != 2 or C.shape != (len(p), len(q)):
        raise ValueError(f"cost is {C.shape}, marginals have lengths {len(p)} and {len(q)}")
    K, N = C.shape
    if K > MAX_SIZE or N > MAX_SIZE:
        raise ValueError(f"exact solver is limited to {MAX_SIZE} x {MAX_SIZE}")
    if not exact and not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    if any(x < 0 for x in p) or any(x < 0 for x in q):
        raise ValueError("marginals must be non-negative")
    sp, sq = sum(p), sum(q)
    if (sp != sq) if exact else abs(sp - sq) > tol:
        raise ValueError(f"infeasible marginals: sum(p) = {sp} but sum(q) = {sq}")
    scale = 0 if exact else tol * max(1.0, float(np.max(np.abs(C))))
    basis = _northwest(list(p), list(q))
    max_iter = max_iter or 50 * K * N * (K + N)
    it = 0
    while True:
        u, v, adj = _potentials(C, basis, K, N)
        entering = None
        for i in range(K):
            for j in range(N):
                if (i, j) not in basis and C[i, j] - u[i] - v[j] < -scale:
                    entering = (i, j)
                    break
            if entering:
                break
        if entering is None:
            break
        it += 1
        if it > max_iter:
            raise RuntimeError("transportation simplex did not converge")
        i, j = entering
        nodes = _tree_path(adj, ("c", j), ("r", i))
        # cells along the cycle after the entering cell alternate -, +, -, ...
        cells = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            r, c = (a[1], b[1]) if a[0] == "r" else (b[1], a[1])
            cells.append((r, c))
        minus = cells[0::2]
        theta = min(basis[c] for c in minus)
        leaving = min(c for c in minus if basis[c] == theta)
        for k, cell in enumerate(cells):
            basis[cell] = basis[cell] - theta if k % 2 == 0 else basis[cell] + theta
        del basis[leaving]
        basis[entering] = theta
    H = np.empty((K, N), dtype=object) if exact else np.zeros((K, N))
    if exact:
        H[:] = Fraction(0)
    for (i, j), x in basis.items():
        H[i, j] = x
    if not exact:
        H = np.maximum(H, 0.0)
    cost = sum(H[i, j] * C[i, j] for i in range(K) for j in range(N)) if exact else float(np.sum(H * C))
    return TransportPlan(H, p, q, C, cost, it)


def squared_euclidean_cost(x, x_target) -> np.ndarray:
    """``C[k, n] = |x_k - x_target_n|^2`` for samples stored as rows."""
    x, y = np.atleast_2d(x), np.atleast_2d(x_target)
    return np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)


def ot_gradient_targets(plan: TransportPlan, x, x_target):
    """Per-sample gradient ``e_k = 2 p_k (x_k - sum_n alpha_kn x_target_n)`` and the barycentric targets.

    ``alpha_kn = H[k, n] / p_k``; returns ``(e, targets, alpha)`` with rows per sample.
    """
    H = np.asarray(plan.plan, dtype=float)
    p = np.asarray(plan.p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("every source sample needs positive mass")
    x, y = np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_2d(np.asarray(x_target, dtype=float))
    alpha = H / p[:, None]
    targets = alpha @ y
    return 2 * p[:, None] * (x - targets), targets, alpha


class OptimalTransport(BaseEstimator):
    """Fit a squared-Euclidean plan from ``X`` (source rows) to ``target`` rows; ``transform`` gives barycentric targets."""

    def __init__(self, source_weights=None, target_weights=None):
        self.source_weights = source_weights
        self.target_weights = target_weights

    def fit(self, X, target):
        X, target = np.atleast_2d(np.asarray(X, dtype=float)), np.atleast_2d(np.asarray(target, dtype=float))
        p = np.full(len(X), 1 / len(X)) if self.source_weights is None else np.asarray(self.source_weights, dtype=float)
        q = np.full(len(target), 1 / len(target)) if self.target_weights is None else np.asarray(self.target_weights, dtype=float)
        self.plan_ = ot_solve(squared_euclidean_cost(X, target), p, q)
        self.gradients_, self.targets_, self.alpha_ = ot_gradient_targets(self.plan_, X, target)
        self.cost_ = self.plan_.cost
        return self

    def transform(self, X=None):
        return self.targets_
