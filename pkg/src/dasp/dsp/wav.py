"""WAV reading and writing (PCM16 and float32, mono or multichannel)."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.io import wavfile

__all__ = ["WavFormatError", "read_wav", "write_wav"]


class WavFormatError(ValueError):
    """The file is not a readable PCM16 or float32 WAV."""


def read_wav(path):
    """Return ``(rate, samples)`` with samples as float64 in ``[-1, 1]``, shape ``N`` or ``N x C``."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises several types on truncated headers
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        out = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample type {data.dtype}")
    if out.size == 0:
        raise WavFormatError(f"{path}: no samples")
    if not np.all(np.isfinite(out)):
        raise WavFormatError(f"{path}: non-finite samples")
    return int(rate), out


def write_wav(path, rate: int, samples, fmt: str = "pcm16") -> None:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError("samples must be N or N x C")
    if fmt == "pcm16":
        data = np.round(np.clip(x, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, int(rate), data)
