"""Mel filter bank and cepstral features."""

from __future__ import annotations

import numpy as np
from scipy.fft import dct

__all__ = ["hz_to_mel", "mel_to_hz", "mel_bank", "mel_spectrum", "log_mel", "mfcc"]


def hz_to_mel(f):
    return 1125.0 * np.log1p(np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=float) / 1125.0)


def mel_bank(n_filters: int, n_bins: int, rate: float) -> np.ndarray:
    """``n_filters x n_bins`` triangular filters with centers uniform on the Mel scale.

    Each triangle peaks at its center and falls to zero at its neighbours'
    centers, so adjacent filters cross at half height.
    """
    if n_filters < 2 or n_bins < 2:
        raise ValueError("need at least two filters and two bins")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2), n_filters + 2))
    freqs = np.linspace(0.0, rate / 2, n_bins)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    bank = np.clip(np.minimum(up, down), 0.0, None)
    if np.any(bank.sum(axis=1) == 0):
        raise ValueError(f"{n_filters} filters is too many for {n_bins} bins: some filters cover no bin")
    return bank


def mel_spectrum(power, bank) -> np.ndarray:
    """Filter-bank energies of ``T x K`` power frames, giving ``T x F``."""
    return np.asarray(power) @ np.asarray(bank).T


def log_mel(power, bank, floor: float = 1e-12) -> np.ndarray:
    return np.log(np.maximum(mel_spectrum(power, bank), floor))


def mfcc(logmel, n_coeffs: int = 20) -> np.ndarray:
    """DCT-II (orthonormal) of log-Mel frames along the last axis, keeping ``n_coeffs``."""
    logmel = np.asarray(logmel, dtype=float)
    if not 1 <= n_coeffs <= logmel.shape[-1]:
        raise ValueError(f"cannot keep {n_coeffs} coefficients from {logmel.shape[-1]} filters")
    c = dct(np.asarray(logmel, dtype=float), type=2, norm="ortho", axis=-1)
    return c[..., :n_coeffs]
