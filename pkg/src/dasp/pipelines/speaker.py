"""Speaker embeddings, enrollment and cosine-scored identification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Adam, Tensor, concat, grad, sqrt
from ..dsp import log_mel, mel_bank, mfcc, stft
from ..layers import DenseLayer, Sequential, StatsPooling
from ..losses import ntxent
from .common import Standardizer, TrainLog
from .synth import Dataset


@dataclass(frozen=True)
class SpeakerRecord:
    speaker_id: str
    embedding: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.embedding, dtype=float)
        if abs(np.linalg.norm(z) - 1.0) > 1e-12:
            raise ValueError("speaker embeddings must have unit norm")
        object.__setattr__(self, "embedding", z)


@dataclass(frozen=True)
class Identification:
    """Best-matching speaker, or ``None`` below threshold or with an empty registry.

    ``score`` is ``S_max`` and is NaN when the registry is empty (``defined`` False).
    """

    speaker_id: str | None
    score: float
    defined: bool
    scores: dict


class SpeakerRegistry(dict):
    """Mapping ``speaker_id -> SpeakerRecord``."""

    def add(self, record: SpeakerRecord) -> None:
        self[record.speaker_id] = record


def unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero embedding cannot be normalized")
    return v / n


class SpeakerEmbedder(BaseEstimator):
    """MFCC frames -> per-frame dense layers -> mean/std pooling -> dense -> unit norm.

    Trained with the normalized-temperature cross-entropy on pairs of clips
    from the same speaker, with the other speakers in the batch as negatives.
    """

    def __init__(
        self,
        n_mfcc: int = 20,
        n_mels: int = 32,
        frame_hidden: int = 64,
        dim: int = 32,
        steps: int = 300,
        lr: float = 3e-3,
        tau: float = 0.2,
        win_length: int = 256,
        hop: int = 128,
        seed: int = 0,
    ):
        self.n_mfcc = n_mfcc
        self.n_mels = n_mels
        self.frame_hidden = frame_hidden
        self.dim = dim
        self.steps = steps
        self.lr = lr
        self.tau = tau
        self.win_length = win_length
        self.hop = hop
        self.seed = seed

    def _mfcc(self, x) -> np.ndarray:
        spec = stft(np.asarray(x, float), self.win_length, self.hop, rate=self.rate_)
        return mfcc(log_mel(spec.power, self.bank_), self.n_mfcc)

    def _embed_tensor(self, feats: np.ndarray) -> Tensor:
        h = self.frame_net_(Tensor(self.scaler_.transform(feats).T))
        z = self.head_(self.pool_(h))
        return z / sqrt((z * z).sum())

    def _prepare(self, rate):
        self.rate_ = rate
        self.bank_ = mel_bank(self.n_mels, self.win_length // 2 + 1, rate)

    def fit(self, dataset: Dataset, train_idx=None):
        if dataset.speakers is None:
            raise ValueError("speaker training needs speaker labels")
        train_idx = np.arange(len(dataset)) if train_idx is None else np.asarray(train_idx)
        self._prepare(dataset.spec.rate)
        feats = {n: self._mfcc(dataset.inputs[n]) for n in train_idx}
        self.scaler_ = Standardizer().fit(np.vstack(list(feats.values())))
        rng = np.random.default_rng([self.seed, 2])
        H = self.frame_hidden
        self.frame_net_ = Sequential([DenseLayer(self.n_mfcc, H, "relu", rng=rng), DenseLayer(H, H, "relu", rng=rng)])
        self.pool_ = StatsPooling()
        self.head_ = DenseLayer(2 * H, self.dim, rng=rng)
        params = self.frame_net_.parameters() + self.head_.parameters()
        opt = Adam(params, lr=self.lr)
        by_speaker = {s: train_idx[dataset.speakers[train_idx] == s] for s in np.unique(dataset.speakers[train_idx])}
        by_speaker = {s: v for s, v in by_speaker.items() if len(v) >= 2}
        if len(by_speaker) < 2:
            raise ValueError("need at least two speakers with two clips each")
        self.log_ = TrainLog()
        for step in range(int(self.steps)):
            pairs = [rng.choice(v, 2, replace=False) for v in by_speaker.values()]
            za = concat([self._embed_tensor(feats[a]).reshape(1, -1) for a, _ in pairs], axis=0)
            zb = concat([self._embed_tensor(feats[b]).reshape(1, -1) for _, b in pairs], axis=0)
            loss = ntxent(za, zb, tau=self.tau)
            opt.step(grad(loss, params))
            self.log_.append(step=step, loss=float(loss.data))
        return self

    def embed(self, x) -> np.ndarray:
        """Unit-norm embedding of one clip."""
        check_is_fitted(self, "head_")
        return unit(self._embed_tensor(self._mfcc(x)).data)


def speaker_enroll(audio, extractor: SpeakerEmbedder, speaker_id: str = "speaker", **metadata) -> SpeakerRecord:
    """Record with the unit-norm embedding of ``audio``; several clips are averaged then re-normalized."""
    clips = [audio] if np.ndim(audio) == 1 else list(audio)
    z = unit(np.mean([extractor.embed(c) for c in clips], axis=0))
    return SpeakerRecord(str(speaker_id), z, {"n_clips": len(clips), **metadata})


def speaker_identify(audio, registry: SpeakerRegistry, extractor: SpeakerEmbedder, threshold: float = 0.5) -> Identification:
    """Cosine score against every record; match the arg-max iff ``S_max >= threshold``."""
    if not registry:
        return Identification(None, float("nan"), False, {})
    return identify_embedding(extractor.embed(audio), registry, threshold)


def identify_embedding(z, registry: SpeakerRegistry, threshold: float = 0.5) -> Identification:
    """Identification from an embedding that is already computed."""
    if not registry:
        return Identification(None, float("nan"), False, {})
    z = unit(np.asarray(z, dtype=float))
    scores = {k: float(z @ r.embedding) for k, r in registry.items()}
    best = max(scores, key=scores.get)
    s_max = scores[best]
    return Identification(best if s_max >= threshold else None, s_max, True, scores)


def train_speaker(dataset: Dataset, steps: int = 300, seed: int = 0, enroll_clips: int = 2, **kwargs):
    """Train on the seeded split, enroll each speaker from its first training clips, identify held-out clips."""
    train_idx, test_idx = dataset.split()
    model = SpeakerEmbedder(steps=steps, seed=seed, **kwargs).fit(dataset, train_idx)
    registry = SpeakerRegistry()
    for s in np.unique(dataset.speakers):
        own = train_idx[dataset.speakers[train_idx] == s][:enroll_clips]
        registry.add(speaker_enroll(dataset.inputs[own], model, f"spk{s}"))
    hits = [identify_embedding(model.embed(dataset.inputs[n]), registry, -1.0).speaker_id == f"spk{dataset.speakers[n]}" for n in test_idx]
    return model, {"top1": float(np.mean(hits)), "registry": registry}
