"""Seeded synthetic datasets for the desk-scale recipes.

Every generator draws from ``np.random.default_rng([seed, stream, clip])`` so
that clip ``n`` of a task depends only on the seed and its own index. Speech is
replaced by harmonic combs with slow amplitude modulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Literal

import numpy as np

from ..dsp import stft
from ..spatial import ArrayGeometry, ArrayScene, Direction

TASKS = ("denoise", "separate", "sed", "speaker", "doa")

# stream ids of the counter-based seeding scheme
_STREAMS = {task: i + 1 for i, task in enumerate(TASKS)}
SPLIT_STREAM = 100


def clip_rng(seed: int, stream: int, clip: int = 0) -> np.random.Generator:
    """Generator for one clip: seeded by the counter tuple ``(seed, stream, clip)``."""
    return np.random.default_rng([int(seed), int(stream), int(clip)])


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic task. Identical specs give identical datasets."""

    task: Literal["denoise", "separate", "sed", "speaker", "doa"]
    rate: int = 8000
    duration: float = 1.0
    snr_db: float = 0.0
    n_sources: int = 2
    density: float = 0.5
    n_clips: int = 100
    seed: int = 0
    tone_hz: float = 1000.0
    n_classes: int = 2
    n_speakers: int = 5
    n_mics: int = 4

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.rate <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be positive")
        if self.n_clips < 1:
            raise ValueError("n_clips must be at least 1")
        if not 0 <= self.density <= 1:
            raise ValueError("density must lie in [0, 1]")
        if self.task == "separate" and self.n_sources not in (2, 3):
            raise ValueError("separation supports 2 or 3 sources")

    @property
    def n_samples(self) -> int:
        return int(round(self.rate * self.duration))

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class Dataset:
    """Signals plus exact labels. Which fields are set depends on the task."""

    spec: SynthSpec
    inputs: np.ndarray
    targets: np.ndarray | None = None
    noise: np.ndarray | None = None
    frame_labels: np.ndarray | None = None
    clip_labels: np.ndarray | None = None
    speakers: np.ndarray | None = None
    scenes: list = field(default_factory=list)
    azimuths: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    def split(self, fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
        """Seeded clip-level partition into training and held-out indices."""
        n = len(self)
        order = clip_rng(self.spec.seed, SPLIT_STREAM).permutation(n)
        cut = int(round(fraction * n))
        if n >= 2:
            cut = min(max(cut, 1), n - 1)
        return np.sort(order[:cut]), np.sort(order[cut:])


def snr_db(signal, noise) -> float:
    """``10 log10(P_s / P_v)`` from mean powers."""
    return float(10 * np.log10(np.mean(np.square(signal)) / np.mean(np.square(noise))))


def _envelope(rng, t, depth=0.5):
    rate = rng.uniform(2.0, 5.0)
    return 1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))


def harmonic_comb(t, f0, amplitudes, rng, f_max=None):
    """Sum of harmonics ``h f0`` with the given amplitudes and random phases."""
    out = np.zeros_like(t)
    for h, a in enumerate(amplitudes, start=1):
        f = h * f0
        if f_max is not None and f >= f_max:
            break
        out += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return out


def _denoise(spec: SynthSpec) -> Dataset:
    t = np.arange(spec.n_samples) / spec.rate
    clean, noise = [], []
    for n in range(spec.n_clips):
        rng = clip_rng(spec.seed, _STREAMS["denoise"], n)
        s = _envelope(rng, t) * np.sin(2 * np.pi * spec.tone_hz * t + rng.uniform(0, 2 * np.pi))
        s *= rng.uniform(0.2, 0.5)
        v = rng.standard_normal(spec.n_samples)
        if np.isinf(spec.snr_db):
            v[:] = 0.0
        else:
            v *= np.sqrt(np.mean(s**2) / (np.mean(v**2) * 10 ** (spec.snr_db / 10)))
        clean.append(s)
        noise.append(v)
    clean, noise = np.array(clean), np.array(noise)
    return Dataset(spec, clean + noise, targets=clean, noise=noise)


def _band_comb(rng, t, lo, hi):
    spacing = rng.uniform(0.08, 0.12) * (hi - lo)
    freqs = np.arange(lo + rng.uniform(0, 0.5) * spacing, hi, spacing)
    out = sum(rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) for f in freqs)
    return out * _envelope(rng, t)


def _separate(spec: SynthSpec) -> Dataset:
    """Sources occupy disjoint frequency bands with a guard gap between them."""
    t = np.arange(spec.n_samples) / spec.rate
    nyq = spec.rate / 2
    J = spec.n_sources
    edges = np.linspace(0.03 * nyq, 0.95 * nyq, J + 1)
    guard = 0.06 * nyq
    mixtures, stems = [], []
    for n in range(spec.n_clips):
        rng = clip_rng(spec.seed, _STREAMS["separate"], n)
        srcs = []
        for j in range(J):
            lo, hi = edges[j] + (guard / 2 if j else 0), edges[j + 1] - (guard / 2 if j < J - 1 else 0)
            s = _band_comb(rng, t, lo, hi)
            srcs.append(s / np.sqrt(np.mean(s**2)) * rng.uniform(0.1, 0.3))
        srcs = np.array(srcs)[rng.permutation(J)]
        stems.append(srcs)
        mixtures.append(srcs.sum(axis=0))
    return Dataset(spec, np.array(mixtures), targets=np.array(stems))


def frame_centers(n_frames: int, win_length: int, hop: int, pad: int) -> np.ndarray:
    """Sample index at the center of every STFT frame of the unpadded signal."""
    return np.arange(n_frames) * hop - pad + win_length / 2


# per-class event recipes: (kind, frequency band in Hz, duration range in s)
_EVENT_CLASSES = (
    ("tone", (1000.0, 1000.0), (0.05, 0.12)),
    ("band", (2500.0, 3200.0), (0.25, 0.5)),
    ("tone", (500.0, 500.0), (0.1, 0.3)),
    ("band", (1500.0, 2000.0), (0.15, 0.4)),
)


def _event(rng, kind, band, n, rate):
    t = np.arange(n) / rate
    if kind == "tone":
        x = np.sin(2 * np.pi * band[0] * t + rng.uniform(0, 2 * np.pi))
    else:
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1 / rate)
        spec[(f < band[0]) | (f > band[1])] = 0
        x = np.fft.irfft(spec, n)
        x /= np.sqrt(np.mean(x**2)) * np.sqrt(2) + 1e-12
    ramp = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / max(1, int(0.005 * rate)))
    return x * ramp


def _sed(spec: SynthSpec, win_length: int = 256, hop: int = 128) -> Dataset:
    """Weak-label clips; ``frame_labels`` is ``N x T x C`` on the STFT frame grid."""
    if spec.n_classes > len(_EVENT_CLASSES):
        raise ValueError(f"at most {len(_EVENT_CLASSES)} event classes are defined")
    L = spec.n_samples
    grid = stft(np.zeros(L), win_length, hop, rate=spec.rate)
    pad, n_frames = grid.pad, grid.frames.shape[0]
    centers = frame_centers(n_frames, win_length, hop, pad)
    audio, frames, clips = [], [], []
    for n in range(spec.n_clips):
        rng = clip_rng(spec.seed, _STREAMS["sed"], n)
        x = 0.01 * rng.standard_normal(L)
        lab = np.zeros((n_frames, spec.n_classes))
        for c in range(spec.n_classes):
            if rng.uniform() >= spec.density:
                continue
            kind, band, dur = _EVENT_CLASSES[c]
            for _ in range(rng.integers(1, 3)):
                d = int(rng.uniform(*dur) * spec.rate)
                start = int(rng.integers(0, max(1, L - d)))
                x[start : start + d] += rng.uniform(0.3, 0.6) * _event(rng, kind, band, d, spec.rate)[: L - start]
                lab[(centers >= start) & (centers < start + d), c] = 1
        audio.append(x)
        frames.append(lab)
        clips.append(lab.max(axis=0))
    return Dataset(spec, np.array(audio), frame_labels=np.array(frames), clip_labels=np.array(clips))


def speaker_templates(n_speakers: int, seed: int = 0) -> list[tuple[float, np.ndarray]]:
    """Fundamental and harmonic amplitude profile of each synthetic speaker."""
    rng = clip_rng(seed, _STREAMS["speaker"], 10**6)
    f0s = np.linspace(100, 240, n_speakers)[rng.permutation(n_speakers)]
    out = []
    for f0 in f0s:
        h = np.arange(1, 30)
        formants = rng.uniform(300, 3000, size=2)
        amp = sum(np.exp(-0.5 * ((h * f0 - f) / 250.0) ** 2) for f in formants) + 0.1 / h
        out.append((float(f0), amp))
    return out


def _speaker(spec: SynthSpec) -> Dataset:
    templates = speaker_templates(spec.n_speakers, spec.seed)
    t = np.arange(spec.n_samples) / spec.rate
    audio, ids = [], []
    for n in range(spec.n_clips):
        rng = clip_rng(spec.seed, _STREAMS["speaker"], n)
        who = n % spec.n_speakers
        f0, amp = templates[who]
        f0 = f0 * rng.uniform(0.95, 1.05)
        jitter = amp * rng.uniform(0.8, 1.2, size=amp.shape)
        x = harmonic_comb(t, f0, jitter, rng, f_max=0.95 * spec.rate / 2) * _envelope(rng, t, 0.6)
        x /= np.sqrt(np.mean(x**2))
        x += 10 ** (-spec.snr_db / 20) * rng.standard_normal(len(t)) if np.isfinite(spec.snr_db) else 0.0
        audio.append(0.1 * x)
        ids.append(who)
    return Dataset(spec, np.array(audio), speakers=np.array(ids))


def circular_array(n_mics: int = 4, radius: float = 0.05) -> ArrayGeometry:
    """Uniform circular array in the horizontal plane."""
    a = 2 * np.pi * np.arange(n_mics) / n_mics
    return ArrayGeometry(np.stack([radius * np.cos(a), radius * np.sin(a), np.zeros(n_mics)], axis=1))


def _doa(spec: SynthSpec) -> Dataset:
    """White-noise sources at random azimuths; ``snr_db`` sets per-channel noise."""
    geometry = circular_array(spec.n_mics)
    scenes, azimuths = [], []
    Q = spec.n_sources
    for n in range(spec.n_clips):
        rng = clip_rng(spec.seed, _STREAMS["doa"], n)
        az = rng.uniform(0, 360, size=Q)
        sources = [(Direction.from_degrees(a), rng.standard_normal(spec.n_samples)) for a in az]
        noise_std = 10 ** (-spec.snr_db / 20) if np.isfinite(spec.snr_db) else 0.0
        scenes.append(ArrayScene(geometry, sources, noise_std=noise_std, rate=spec.rate))
        azimuths.append(az)
    inputs = np.array([[s for _, s in sc.sources] for sc in scenes])
    return Dataset(spec, inputs, scenes=scenes, azimuths=np.array(azimuths))


def synth_generate(spec: SynthSpec) -> Dataset:
    """Generate the dataset described by ``spec``."""
    return {"denoise": _denoise, "separate": _separate, "sed": _sed, "speaker": _speaker, "doa": _doa}[spec.task](spec)
