"""Framing, overlap-add and constant-overlap-add (COLA) windows."""

from __future__ import annotations

import numpy as np

__all__ = [
    "frame_signal",
    "overlap_add",
    "cola_matrix",
    "cola_residual",
    "solve_cola_window",
    "base_window",
    "InfeasibleWindowError",
]


class InfeasibleWindowError(ValueError):
    """No window satisfies the overlap-add constraint for the requested framing."""


def frame_signal(x, win_length: int, hop: int) -> np.ndarray:
    """Slice a 1-D signal into ``T x win_length`` frames starting every ``hop`` samples."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if len(x) < win_length:
        raise ValueError(f"signal of {len(x)} samples is shorter than the window ({win_length})")
    n = (len(x) - win_length) // hop + 1
    idx = np.arange(n)[:, None] * hop + np.arange(win_length)[None, :]
    return x[idx]


def overlap_add(frames, hop: int, length: int | None = None) -> np.ndarray:
    """Sum ``T x L`` frames placed every ``hop`` samples."""
    frames = np.asarray(frames)
    T, L = frames.shape
    total = (T - 1) * hop + L
    out = np.zeros(total, dtype=frames.dtype)
    for t in range(T):
        out[t * hop : t * hop + L] += frames[t]
    if length is not None:
        out = out[:length] if length <= total else np.pad(out, (0, length - total))
    return out


def cola_matrix(win_length: int, hop: int) -> np.ndarray:
    """``hop x win_length`` matrix ``A`` with ``(A psi)_r = sum_q psi(r + q hop)``."""
    A = np.zeros((hop, win_length))
    cols = np.arange(win_length)
    A[cols % hop, cols] = 1.0
    return A


def cola_residual(window, hop: int) -> float:
    """``max_t |sum_i psi(t - i hop) - 1|``."""
    w = np.asarray(window, dtype=float)
    return float(np.max(np.abs(cola_matrix(len(w), hop) @ w - 1.0)))


def base_window(kind: str, win_length: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(win_length)
    if kind == "hann":
        # periodic Hann
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win_length) / win_length)
    raise ValueError(f"unknown window shape {kind!r}")


def solve_cola_window(win_length: int, hop: int, base: str | np.ndarray = "hann", tol: float = 1e-10) -> np.ndarray:
    """Window satisfying ``sum_i psi(t - i hop) = 1`` for every ``t``.

    The base shape is rescaled when its overlap sum is already constant;
    otherwise the solution of ``A psi = 1`` closest to the base shape in the
    least-squares sense is returned. A hop equal to the window length forces
    the rectangular window.
    """
    win_length, hop = int(win_length), int(hop)
    if hop < 1 or win_length < 1:
        raise ValueError("window length and hop must be positive")
    if hop > win_length:
        raise InfeasibleWindowError(
            f"hop {hop} exceeds window length {win_length}: samples between frames are never covered "
            f"(residual norm {np.sqrt(hop - win_length):.3g})"
        )
    if win_length % hop:
        raise ValueError(f"window length {win_length} must be a multiple of the hop {hop}")
    b = base_window(base, win_length) if isinstance(base, str) else np.asarray(base, dtype=float)
    if b.shape != (win_length,):
        raise ValueError("base window has the wrong length")
    A = cola_matrix(win_length, hop)
    sums = A @ b
    if sums.min() > 0 and np.ptp(sums) <= 1e-12 * sums.max():
        psi = b / sums.mean()
    else:
        # min-norm correction: A A^T = Q I
        Q = win_length // hop
        psi = b + A.T @ (1.0 - sums) / Q
    res = np.linalg.norm(A @ psi - 1.0)
    if res > tol * np.sqrt(hop) * 10:
        raise InfeasibleWindowError(f"overlap-add constraint unsatisfied, residual norm {res:.3g}")
    return psi
