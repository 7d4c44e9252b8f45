"""Same-speaker pseudo-fake synthesis and detector training for audio deepfake detection."""
from .audio import Waveform, load_wav, save_wav
from .metrics import ScoreSet, auc, accuracy, average_precision, eer
from .training import ReweightingLoss, TrainConfig, reweighted_bce
from .transforms import IntensityPreset, RawBoostConfig, TransformKind, intensity_preset

__version__ = "0.1.0"

__all__ = [
    "Waveform", "load_wav", "save_wav",
    "ScoreSet", "eer", "auc", "accuracy", "average_precision",
    "ReweightingLoss", "TrainConfig", "reweighted_bce",
    "IntensityPreset", "RawBoostConfig", "TransformKind", "intensity_preset",
]
