"""Short-time Fourier transform with a single analysis window and plain overlap-add."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .framing import frame_signal, overlap_add, solve_cola_window

__all__ = ["Spectrogram", "dft_matrix", "stft", "istft"]


def dft_matrix(n: int) -> np.ndarray:
    """``n x n`` DFT matrix ``W`` with ``W[t, k] = exp(-2 pi i t k / n)``."""
    t = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(t, t) / n)


@dataclass(frozen=True)
class Spectrogram:
    """One-sided STFT: ``frames`` is ``T x K`` complex with ``K = win_length // 2 + 1``."""

    frames: np.ndarray
    window: np.ndarray
    hop: int
    rate: float
    length: int
    pad: int = 0

    @property
    def win_length(self) -> int:
        return len(self.window)

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.frames) ** 2

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.rate / self.win_length

    def with_frames(self, frames) -> "Spectrogram":
        frames = np.asarray(frames)
        if frames.shape != self.frames.shape:
            raise ValueError(f"frames shape {frames.shape} does not match {self.frames.shape}")
        return Spectrogram(frames, self.window, self.hop, self.rate, self.length, self.pad)

    def to_csv(self, path) -> None:
        """Write the magnitude as CSV, one row per frame."""
        np.savetxt(path, self.magnitude, delimiter=",", fmt="%.10g")


def stft(x, win_length: int = 512, hop: int = 256, window="hann", rate: float = 16000.0, pad: bool = True) -> Spectrogram:
    """Analysis ``W^T x(t)`` of windowed frames.

    ``window`` is a COLA base shape name or an explicit window. With ``pad`` the
    signal is zero padded by ``win_length - hop`` on both sides so every sample
    lies under a full set of overlapping frames and ``istft`` is exact.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    psi = solve_cola_window(win_length, hop, window) if isinstance(window, str) else np.asarray(window, dtype=float)
    if psi.shape != (win_length,):
        raise ValueError("window length mismatch")
    n = len(x)
    edge = win_length - hop if pad else 0
    if pad:
        tail = (-(n + 2 * edge - win_length)) % hop
        xp = np.pad(x, (edge, edge + tail))
    else:
        if n < win_length:
            raise ValueError(f"signal of {n} samples is shorter than the window ({win_length})")
        xp = x
    frames = frame_signal(xp, win_length, hop) * psi
    return Spectrogram(np.fft.rfft(frames, axis=1), psi, int(hop), float(rate), n, edge)


def istft(spec: Spectrogram, mask=None) -> np.ndarray:
    """Synthesis ``(1/L_w) W^* X`` followed by overlap-add; ``mask`` multiplies the bins first."""
    X = spec.frames if mask is None else spec.frames * np.asarray(mask)
    frames = np.fft.irfft(X, n=spec.win_length, axis=1)
    y = overlap_add(frames, spec.hop)
    return y[spec.pad : spec.pad + spec.length] if spec.pad else y[: spec.length]
