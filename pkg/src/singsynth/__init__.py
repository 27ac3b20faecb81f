"""Singing voice synthesis at desk scale.

Score parsing and phoneme rows, LPCNet-style acoustic features, a duration
model with a syllable-level loss, a FastSpeech-style acoustic model with
progressive decoder loss and speaker-adversarial training, VS segmentation,
and objective metrics.
"""

from .acoustic import AcousticExample, AcousticModel, progressive_loss, speaker_probe_accuracy, train_acoustic
from .augment import Clip, SegmentClass, segment, vs_augment
from .config import RunConfig
from .dsp import DSPConfig, MinMaxFeatureScaler, NormStats, Waveform, bfcc_to_lpc, features
from .duration import DurationModel, multiscale_loss, postprocess, train_duration
from .exceptions import SingSynthError
from .metrics import MetricsReport, evaluate_durations, evaluate_features
from .score import Score, parse_musicxml
from .sequence import PhonemeRow, attach_ground_truth, build_rows

__version__ = "0.1.0"

__all__ = [
    "AcousticExample", "AcousticModel", "Clip", "DSPConfig", "DurationModel", "MetricsReport",
    "MinMaxFeatureScaler", "NormStats", "PhonemeRow", "RunConfig", "Score", "SegmentClass",
    "SingSynthError", "Waveform", "attach_ground_truth", "bfcc_to_lpc", "build_rows",
    "evaluate_durations", "evaluate_features", "features", "multiscale_loss", "parse_musicxml",
    "postprocess", "progressive_loss", "segment", "speaker_probe_accuracy", "train_acoustic",
    "train_duration", "vs_augment",
]
