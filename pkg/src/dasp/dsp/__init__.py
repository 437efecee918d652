"""Signal processing front end: framing, STFT, Mel features, masks and WAV I/O."""

from .framing import (
    InfeasibleWindowError,
    base_window,
    cola_matrix,
    cola_residual,
    frame_signal,
    overlap_add,
    solve_cola_window,
)
from .masks import ideal_masks, learned_analysis, wiener_gain
from .mel import hz_to_mel, log_mel, mel_bank, mel_spectrum, mel_to_hz, mfcc
from .stft import Spectrogram, dft_matrix, istft, stft
from .wav import WavFormatError, read_wav, write_wav

__all__ = [
    "InfeasibleWindowError", "base_window", "cola_matrix", "cola_residual", "frame_signal",
    "overlap_add", "solve_cola_window", "ideal_masks", "learned_analysis", "wiener_gain",
    "hz_to_mel", "log_mel", "mel_bank", "mel_spectrum", "mel_to_hz", "mfcc",
    "Spectrogram", "dft_matrix", "istft", "stft", "WavFormatError", "read_wav", "write_wav",
]
