"""Synthetic datasets and desk-scale end-to-end recipes."""

from .common import Standardizer, TrainingDivergedError, TrainLog, context_stack, fit_minibatches, mlp, write_csv
from .denoise import Denoiser, si_sdr_db, train_denoiser
from .doa import (
    DoaNetwork,
    DoaResult,
    angular_error,
    circular_peaks,
    estimate_doa,
    evaluate_doa,
    grid_azimuths,
    train_doa,
)
from .sed import EventDetector, class_auc, frame_auc, train_sed
from .separate import Separator, best_permutation_si_sdr, ideal_mask_separation, train_separator
from .speaker import (
    Identification,
    SpeakerEmbedder,
    SpeakerRecord,
    SpeakerRegistry,
    identify_embedding,
    speaker_enroll,
    speaker_identify,
    train_speaker,
)
from .synth import TASKS, Dataset, SynthSpec, circular_array, clip_rng, frame_centers, snr_db, speaker_templates, synth_generate

__all__ = [
    "Standardizer", "TrainingDivergedError", "TrainLog", "context_stack", "fit_minibatches", "mlp", "write_csv",
    "Denoiser", "si_sdr_db", "train_denoiser",
    "DoaNetwork", "DoaResult", "angular_error", "circular_peaks", "estimate_doa", "evaluate_doa", "grid_azimuths", "train_doa",
    "EventDetector", "class_auc", "frame_auc", "train_sed",
    "Separator", "best_permutation_si_sdr", "ideal_mask_separation", "train_separator",
    "Identification", "SpeakerEmbedder", "SpeakerRecord", "SpeakerRegistry", "identify_embedding",
    "speaker_enroll", "speaker_identify", "train_speaker",
    "TASKS", "Dataset", "SynthSpec", "circular_array", "clip_rng", "frame_centers", "snr_db", "speaker_templates", "synth_generate",
]
