"""Versioned run configuration (TOML, ``schema_version = 1``).

Every tunable and every fixed design constant of the pipeline is listed with
its default. Unknown sections or keys are rejected. Constants that are part
of a file format or vocabulary contract are recorded for auditability and
must keep their default value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .dsp import DSPConfig
from .exceptions import ConfigError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PathsConfig:
    work_dir: str = "work"


@dataclass(frozen=True)
class ScoreConfig:
    frames_per_second: int = 100
    rounding: str = "half_away_from_zero"
    melisma_without_slur_attaches: bool = True
    merge_ties: bool = True
    strip_tone_digits: bool = True
    erhua: str = "reject"


@dataclass(frozen=True)
class SequenceConfig:
    silence_merge_ms: float = 30.0
    melisma_repeats: str = "final"
    unknown_phoneme: str = "error"
    vocab_version: int = 1


@dataclass(frozen=True)
class NeuralConfig:
    init: str = "uniform_inverse_sqrt_fan_in"
    lstm_forget_bias: float = 1.0
    dropout: float = 0.0
    checkpoint_dtype: str = "float32"


@dataclass(frozen=True)
class DurationConfig:
    ph_dim: int = 32
    pt_dim: int = 32
    pi_dim: int = 32
    sr_dim: int = 32
    bt_dim: int = 32
    layers: int = 2
    hidden: int = 64
    epochs: int = 20
    lr: float = 3e-3
    batch_size: int = 4
    use_syllable_term: bool = True
    holdout: float = 0.1
    clip_norm: float = 5.0
    final_lr_ratio: float = 0.05
    loss_domain: str = "linear_frames"
    target: str = "log_frames"
    consonant_cap_frames: int = 10
    reapportion: str = "largest_remainder"


@dataclass(frozen=True)
class AcousticConfig:
    dim: int = 32
    heads: int = 2
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    kernel_size: int = 3
    filter_size: int = 64
    postnet_kernel: int = 5
    grl_lambda: float = 0.02
    w_f0: float = 1.2
    progressive: bool = True
    use_dat: bool = True
    epochs: int = 30
    lr: float = 2e-3
    batch_size: int = 2
    holdout: float = 0.0
    clip_norm: float = 1.0
    final_lr_ratio: float = 0.1
    classifier_lr_scale: float = 10.0
    classifier_steps: int = 20
    loss_dim_reduction: str = "mean"
    positional_encoding: str = "sinusoidal"
    dat_during_finetune: bool = False


@dataclass(frozen=True)
class AugmentConfig:
    pause_frames: int = 10
    classes: tuple = ((0.0, 5.0), (5.0, 8.0), (8.0, 12.0))
    keep_over_length: bool = True
    deduplicate_classes: bool = False
    audio_pitch_shift: bool = False
    transpose: bool = False
    transpose_semitones: tuple = (-1, 1)


@dataclass(frozen=True)
class MetricsConfig:
    voicing_threshold: float = 0.3
    dur_tolerance: int = 5
    f0_units: str = "hz"
    bfccd_excludes_c0: bool = True


# (section, key) pairs that document a contract rather than a knob
FIXED = {
    ("score", k) for k in ("frames_per_second", "rounding", "melisma_without_slur_attaches",
                           "merge_ties", "strip_tone_digits", "erhua")
} | {
    ("sequence", k) for k in ("melisma_repeats", "unknown_phoneme", "vocab_version")
} | {
    ("neural", k) for k in ("init", "lstm_forget_bias", "dropout", "checkpoint_dtype")
} | {
    ("dsp", "sample_rate"), ("dsp", "hop"), ("dsp", "n_bands"), ("dsp", "max_hz"),
    ("duration", "loss_domain"), ("duration", "target"), ("duration", "consonant_cap_frames"),
    ("duration", "reapportion"),
    ("acoustic", "loss_dim_reduction"), ("acoustic", "positional_encoding"),
    ("acoustic", "dat_during_finetune"),
    ("augment", "pause_frames"), ("augment", "classes"), ("augment", "keep_over_length"),
    ("augment", "deduplicate_classes"), ("augment", "audio_pitch_shift"),
    ("metrics", "f0_units"), ("metrics", "bfccd_excludes_c0"),
}

_SECTIONS = {
    "paths": PathsConfig, "score": ScoreConfig, "sequence": SequenceConfig, "dsp": DSPConfig,
    "neural": NeuralConfig, "duration": DurationConfig, "acoustic": AcousticConfig,
    "augment": AugmentConfig, "metrics": MetricsConfig,
}


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def _coerce(section: str, key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"[{section}] {key}: expected a string, got {value!r}")
        return value
    value = _freeze(value)
    if isinstance(default, tuple) and not isinstance(value, tuple):
        raise ConfigError(f"[{section}] {key}: expected a list, got {value!r}")
    return value


def _build(section: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be a table")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        value = _coerce(section, key, value, default)
        if (section, key) in FIXED and value != default:
            raise ConfigError(f"[{section}] {key} is fixed at {_thaw(default)!r}")
        kwargs[key] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    paths: PathsConfig = field(default_factory=PathsConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    dsp: DSPConfig = field(default_factory=DSPConfig)
    neural: NeuralConfig = field(default_factory=NeuralConfig)
    duration: DurationConfig = field(default_factory=DurationConfig)
    acoustic: AcousticConfig = field(default_factory=AcousticConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        seed = data.pop("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        sections = {name: _build(name, c, data.get(name, {})) for name, c in _SECTIONS.items()}
        return cls(seed=seed, **sections)

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "seed": self.seed}
        for name in _SECTIONS:
            out[name] = {k: _thaw(v) for k, v in asdict(getattr(self, name)).items()}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")
