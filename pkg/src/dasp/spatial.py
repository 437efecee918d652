"""Direct-path array simulation and direction-of-arrival features and labels.

Directions are unit vectors ``[sin(el) cos(az), sin(el) sin(az), cos(el)]``
pointing from the array towards the source. A multichannel observation holds
``M x T x K`` one-sided STFT frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dsp import Spectrogram, read_wav, stft

__all__ = [
    "ArrayGeometry",
    "Direction",
    "ArrayScene",
    "ArrayObservation",
    "DirectionEstimate",
    "GeometryRankError",
    "azimuth_grid",
    "steering_vector",
    "manifold",
    "multichannel_stft",
    "simulate_scene",
    "raw_features",
    "covariance",
    "spatial_spectrum",
    "correlation_feature",
    "principal_eigenvector",
    "solve_direction_from_phase",
    "doa_labels",
    "accdoa_encode",
    "accdoa_decode",
    "load_scene",
    "save_heatmap",
]

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be M x 3, got {pos.shape}")
        if pos.shape[0] < 2:
            raise ValueError("an array needs at least two microphones")
        gaps = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(gaps[np.triu_indices(len(pos), 1)] < 1e-12):
            raise ValueError("microphone positions must be distinct")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        object.__setattr__(self, "positions", pos)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def max_spacing(self) -> float:
        pos = self.positions
        return float(np.max(np.linalg.norm(pos[:, None] - pos[None], axis=-1)))

    @property
    def aliasing_limit(self) -> float:
        """Largest angular frequency (rad/s) without phase wrapping, ``pi c / delta_max``."""
        return np.pi * self.speed_of_sound / self.max_spacing


@dataclass(frozen=True)
class Direction:
    elevation: float
    azimuth: float

    def __post_init__(self):
        if not 0.0 <= self.elevation <= np.pi + 1e-12:
            raise ValueError("elevation must lie in [0, pi]")
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2 * np.pi))

    @property
    def vector(self) -> np.ndarray:
        el, az = self.elevation, self.azimuth
        return np.array([np.sin(el) * np.cos(az), np.sin(el) * np.sin(az), np.cos(el)])

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if n < 1e-12:
            raise ValueError("zero vector has no direction")
        v = v / n
        return cls(float(np.arccos(np.clip(v[2], -1, 1))), float(np.arctan2(v[1], v[0])))

    @classmethod
    def from_degrees(cls, azimuth: float, elevation: float = 90.0) -> "Direction":
        return cls(np.deg2rad(elevation), np.deg2rad(azimuth))


def _as_vectors(directions) -> np.ndarray:
    if isinstance(directions, Direction):
        return directions.vector[None]
    if isinstance(directions, (list, tuple)) and directions and isinstance(directions[0], Direction):
        return np.stack([d.vector for d in directions])
    return np.atleast_2d(np.asarray(directions, dtype=float))


def azimuth_grid(n: int = 72, elevation: float = np.pi / 2) -> np.ndarray:
    """``n x 3`` unit vectors on a horizontal ring, ``360/n`` degrees apart."""
    az = 2 * np.pi * np.arange(n) / n
    return np.stack([np.sin(elevation) * np.cos(az), np.sin(elevation) * np.sin(az), np.full(n, np.cos(elevation))], axis=1)


def manifold(omegas, geometry: ArrayGeometry, directions) -> np.ndarray:
    """Array manifold ``exp(-j w (r_1 - r_m)^T phi / c)`` with shape ``J x K x M``."""
    vecs = _as_vectors(directions)
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    if np.any(w < 0):
        raise ValueError("angular frequency must be non-negative")
    lead = (geometry.positions[0] - geometry.positions) @ vecs.T / geometry.speed_of_sound  # M x J
    return np.exp(-1j * w[None, :, None] * lead.T[:, None, :])


def steering_vector(omega: float, geometry: ArrayGeometry, direction) -> np.ndarray:
    return manifold([omega], geometry, direction)[0, 0]


@dataclass(frozen=True)
class ArrayObservation:
    """Multichannel STFT: ``frames`` is ``M x T x K``; ``template`` carries framing for synthesis."""

    frames: np.ndarray
    template: Spectrogram

    @property
    def omegas(self) -> np.ndarray:
        return 2 * np.pi * self.template.bin_frequencies()

    @property
    def n_channels(self) -> int:
        return self.frames.shape[0]

    def channel(self, m: int) -> Spectrogram:
        return self.template.with_frames(self.frames[m])


def multichannel_stft(signals, win_length: int = 512, hop: int = 256, rate: float = 16000.0, window="hann") -> ArrayObservation:
    """STFT of each column of an ``N x M`` signal matrix."""
    x = np.asarray(signals, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected N x M samples")
    specs = [stft(x[:, m], win_length, hop, window, rate) for m in range(x.shape[1])]
    return ArrayObservation(np.stack([s.frames for s in specs]), specs[0])


@dataclass
class ArrayScene:
    geometry: ArrayGeometry
    sources: list = field(default_factory=list)  # (Direction, samples)
    noise_std: float | np.ndarray = 0.0
    rate: float = 16000.0

    def __post_init__(self):
        lengths = {len(np.asarray(s)) for _, s in self.sources}
        if len(lengths) > 1:
            raise ValueError("all source signals must have the same length")


def simulate_scene(scene: ArrayScene, win_length: int = 512, hop: int = 256, seed: int | None = 0):
    """Direct-path observation ``p = sum_q d(w, phi_q) S'_q + v`` in the STFT domain.

    Each source signal is its reference-channel (microphone 1) waveform. Noise is
    white Gaussian per channel, added before analysis so it is complex Gaussian
    per bin. Returns the observation and the ``Q x 3`` true directions.
    """
    if not scene.sources:
        raise ValueError("scene has no sources")
    M = scene.geometry.n_mics
    specs = [stft(np.asarray(s, dtype=float), win_length, hop, rate=scene.rate) for _, s in scene.sources]
    omegas = 2 * np.pi * specs[0].bin_frequencies()
    truth = np.stack([_as_vectors(d)[0] for d, _ in scene.sources])
    D = manifold(omegas, scene.geometry, truth)  # Q x K x M
    frames = np.einsum("qkm,qtk->mtk", D, np.stack([s.frames for s in specs]))
    std = np.broadcast_to(np.asarray(scene.noise_std, dtype=float), (M,))
    if np.any(std > 0):
        rng = np.random.default_rng(seed)
        n = specs[0].length
        noise = rng.standard_normal((n, M)) * std
        frames = frames + multichannel_stft(noise, win_length, hop, scene.rate, specs[0].window).frames
    return ArrayObservation(frames, specs[0]), truth


def raw_features(obs, align: str = "none", reference: int = 0, drop_reference: bool = False) -> np.ndarray:
    """Stack real and imaginary parts per frame: ``T x 2M x K`` (``2(M-1)`` rows if the reference is dropped).

    ``align="reference"`` rotates every channel by the reference phase,
    ``P_m conj(P_ref) / |P_ref|``.
    """
    P = obs.frames if isinstance(obs, ArrayObservation) else np.asarray(obs)
    if P.shape[0] < 2:
        raise ValueError("raw features need at least two channels")
    if align == "reference":
        ref = P[reference]
        mag = np.abs(ref)
        rot = np.divide(np.conj(ref), mag, out=np.zeros_like(ref), where=mag > 0)
        P = P * rot[None]
        if drop_reference:
            P = np.delete(P, reference, axis=0)
    elif align != "none":
        raise ValueError(f"unknown alignment {align!r}")
    return np.concatenate([P.real, P.imag], axis=0).transpose(1, 0, 2)


def covariance(obs, block: int = 50) -> np.ndarray:
    """Trace-normalized block-averaged ``E[p p^H]`` over the last ``block`` frames: ``T x K x M x M``."""
    P = obs.frames if isinstance(obs, ArrayObservation) else np.asarray(obs)
    outer = np.einsum("mtk,ntk->tkmn", P, np.conj(P))
    csum = np.cumsum(outer, axis=0)
    lagged = np.concatenate([np.zeros_like(csum[:block]), csum[:-block]], axis=0)[: len(csum)]
    phi = csum - lagged
    tr = np.real(np.einsum("tkmm->tk", phi))
    scale = np.divide(1.0, tr, out=np.zeros_like(tr), where=tr > 1e-300)
    return phi * scale[..., None, None]


def spatial_spectrum(obs: ArrayObservation, geometry: ArrayGeometry, grid, block: int = 50, bins=None) -> np.ndarray:
    """Delay-and-sum scan ``sum_k h_j^H Phi h_j`` with ``h_j = d(w_k, phi_j) / M``: ``J x T``."""
    grid = _as_vectors(grid)
    if len(grid) == 0:
        raise ValueError("empty direction grid")
    phi = covariance(obs, block)
    h = manifold(obs.omegas, geometry, grid) / geometry.n_mics
    if bins is not None:
        phi, h = phi[:, bins], h[:, bins]
    eps = np.einsum("jkm,tkmn,jkn->jt", np.conj(h), phi, h)
    return np.maximum(eps.real, 0.0)


def correlation_feature(obs: ArrayObservation, geometry: ArrayGeometry, grid, weighting: str = "phat", bins=None) -> np.ndarray:
    """Steered cross-correlation ``Re sum_k d^H Phi d`` per frame with weighted ``Phi_nm = psi_nm P_n P_m^*``.

    ``phat`` divides each cross-spectrum by its magnitude; ``magnitude`` multiplies
    by it. Each ``Phi`` is divided by its trace so global gain has no effect.
    """
    grid = _as_vectors(grid)
    P = obs.frames
    cross = np.einsum("mtk,ntk->tkmn", P, np.conj(P))
    mag = np.abs(cross)
    if weighting == "phat":
        phi = np.divide(cross, mag, out=np.zeros_like(cross), where=mag > 1e-300)
    elif weighting == "magnitude":
        phi = cross * mag
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    tr = np.real(np.einsum("tkmm->tk", phi))
    phi = phi * np.divide(1.0, tr, out=np.zeros_like(tr), where=tr > 1e-300)[..., None, None]
    d = manifold(obs.omegas, geometry, grid)
    if bins is not None:
        phi, d = phi[:, bins], d[:, bins]
    return np.einsum("jkm,tkmn,jkn->jt", np.conj(d), phi, d).real


def principal_eigenvector(phi) -> np.ndarray:
    vals, vecs = np.linalg.eigh(np.asarray(phi))
    return vecs[..., :, -1]


class GeometryRankError(ValueError):
    """Microphone differences do not span the space needed for a 3-D direction."""


@dataclass(frozen=True)
class DirectionEstimate:
    vector: np.ndarray
    residual: float
    rank: int
    aliased: bool

    @property
    def direction(self) -> Direction:
        return Direction.from_vector(self.vector)


def solve_direction_from_phase(u, geometry: ArrayGeometry, omega: float, full_3d: bool = True) -> DirectionEstimate:
    """Least-squares direction from the phases of a steering-like vector ``u``.

    ``u`` is first rotated so its first element has zero phase. The system
    ``(r_1 - r_m)^T phi = -(c / w) angle(u_m)`` is solved with the minimum-norm
    least-squares solution and renormalized to unit length when nonzero.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (geometry.n_mics,):
        raise ValueError("u must have one entry per microphone")
    if omega <= 0:
        raise ValueError("angular frequency must be positive")
    u = u * np.exp(-1j * np.angle(u[0]))
    A = geometry.positions[0] - geometry.positions
    rank = int(np.linalg.matrix_rank(A))
    if full_3d and rank < 3:
        raise GeometryRankError(f"microphone differences have rank {rank}; a 3-D direction needs rank 3")
    b = -(geometry.speed_of_sound / omega) * np.angle(u)
    phi, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.linalg.norm(A @ phi - b))
    n = np.linalg.norm(phi)
    if n > 1e-9:
        phi = phi / n
    return DirectionEstimate(phi, residual, rank, bool(omega >= geometry.aliasing_limit))


def doa_labels(truth, grid, kind: str = "onehot", sigma: float = 0.2) -> np.ndarray:
    """Per-frame grid targets ``T x J``.

    ``truth`` is a list over frames of the active source directions. ``onehot``
    marks the nearest grid point of each source; ``smoothed`` uses
    ``max_q exp(-|phi_q - phi_j|^2 / sigma^2)``.
    """
    grid = _as_vectors(grid)
    out = np.zeros((len(truth), len(grid)))
    if kind == "smoothed" and sigma <= 0:
        raise ValueError("sigma must be positive")
    for t, active in enumerate(truth):
        if active is None or len(active) == 0:
            continue
        vecs = _as_vectors(active)
        dist2 = np.sum((vecs[:, None] - grid[None]) ** 2, axis=-1)
        if kind == "onehot":
            out[t, np.argmin(dist2, axis=1)] = 1.0
        elif kind == "smoothed":
            out[t] = np.max(np.exp(-dist2 / sigma**2), axis=0)
        else:
            raise ValueError(f"unknown label kind {kind!r}; use accdoa_encode for ACCDOA targets")
    return out


def accdoa_encode(events, n_classes: int) -> np.ndarray:
    """``3 x L`` target whose column ``l`` is ``probability * direction`` for each active class.

    ``events`` is a list of ``(class index, direction)`` or ``(class index, direction, probability)``.
    """
    y = np.zeros((3, n_classes))
    for ev in events:
        cls, d = ev[0], ev[1]
        p = ev[2] if len(ev) > 2 else 1.0
        if not 0 <= p <= 1:
            raise ValueError("activity probability must lie in [0, 1]")
        v = _as_vectors(d)[0]
        if abs(np.linalg.norm(v) - 1) > 1e-9:
            raise ValueError("ACCDOA directions must be unit vectors")
        y[:, cls] = p * v
    return y


def accdoa_decode(y, tol: float = 1e-9):
    """Per class ``(probability, unit direction or None)`` from a ``3 x L`` matrix."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] != 3:
        raise ValueError("ACCDOA output must be 3 x L")
    out = []
    for col in y.T:
        n = float(np.linalg.norm(col))
        out.append((n, col / n if n >= tol else None))
    return out


def load_scene(path) -> ArrayScene:
    """Read a YAML scene: ``geometry`` rows (m), ``sources`` with ``wav``, ``azimuth``/``elevation`` (degrees),
    optional ``noise_std``, ``speed_of_sound`` and ``rate``. WAV paths are relative to the file."""
    path = Path(path)
    doc = yaml.safe_load(path.read_text())
    if not isinstance(doc, dict) or "geometry" not in doc or "sources" not in doc:
        raise ValueError("scene needs 'geometry' and 'sources'")
    geometry = ArrayGeometry(np.asarray(doc["geometry"], dtype=float), float(doc.get("speed_of_sound", SPEED_OF_SOUND)))
    sources, rate = [], doc.get("rate")
    for src in doc["sources"]:
        wav_rate, samples = read_wav(path.parent / src["wav"])
        if samples.ndim > 1:
            samples = samples[:, 0]
        if rate is not None and wav_rate != rate:
            raise ValueError(f"{src['wav']}: rate {wav_rate} differs from scene rate {rate}")
        rate = wav_rate
        sources.append((Direction.from_degrees(float(src["azimuth"]), float(src.get("elevation", 90.0))), samples))
    n = min(len(s) for _, s in sources)
    sources = [(d, s[:n]) for d, s in sources]
    return ArrayScene(geometry, sources, doc.get("noise_std", 0.0), float(rate))


def save_heatmap(path, values) -> None:
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.10g")
