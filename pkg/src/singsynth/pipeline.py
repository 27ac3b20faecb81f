"""File-level pipeline stages shared by the command line and the end-to-end run.

A corpus manifest is JSON lines ``{utterance_id, singer_id, score, intervals,
wav}`` with paths relative to the manifest's directory (the layout written by
:func:`singsynth.synth_corpus.write_corpus`).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .acoustic import AcousticExample, AcousticModel
from .augment import SegmentClass, vs_augment
from .config import RunConfig
from .dsp import NormStats, denormalize, features, minmax_fit, normalize, read_wav
from .duration import DurationModel, evaluate_durations as model_duration_scores
from .exceptions import FormatError
from .metrics import MetricsReport, dur_acc, dur_corr, evaluate_features
from .score import load_lexicon, parse_musicxml, transpose_score, write_musicxml
from .sequence import PhonemeRow, attach_ground_truth, build_rows, parse_intervals

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    singer_id: str
    score: Path
    intervals: Optional[Path] = None
    wav: Optional[Path] = None


@dataclass
class CorpusItem:
    utterance_id: str
    singer_id: str
    rows: list[PhonemeRow]
    frames: Optional[np.ndarray] = None


def read_corpus_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            entries.append(ManifestEntry(
                str(d["utterance_id"]), str(d.get("singer_id", "0")), base / d["score"],
                base / d["intervals"] if d.get("intervals") else None,
                base / d["wav"] if d.get("wav") else None))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad manifest line ({exc})") from None
    if not entries:
        raise FormatError(f"{path}: empty manifest")
    return entries


def parse_score_rows(score_path, utterance_id: str = "", lexicon_path=None,
                     transpose: int = 0) -> list[PhonemeRow]:
    lexicon = load_lexicon(Path(lexicon_path)) if lexicon_path else None
    score = parse_musicxml(Path(score_path), lexicon=lexicon)
    if transpose:
        score = transpose_score(score, transpose)
    return build_rows(score, utterance_id or Path(score_path).stem)


def align_rows(rows: Sequence[PhonemeRow], intervals_path, cfg: RunConfig) -> list[PhonemeRow]:
    intervals = parse_intervals(Path(intervals_path).read_text(encoding="utf-8"))
    threshold = Fraction(cfg.sequence.silence_merge_ms).limit_denominator(1000) / 1000
    return attach_ground_truth(rows, intervals, threshold)


def featurize(wav_path, cfg: RunConfig) -> np.ndarray:
    return features(read_wav(wav_path), cfg.dsp)


def load_corpus(entries: Sequence[ManifestEntry], cfg: RunConfig, with_frames: bool) -> list[CorpusItem]:
    """Parse, align and (optionally) featurize every manifest entry."""
    items = []
    for e in entries:
        if e.intervals is None:
            raise FormatError(f"{e.utterance_id}: manifest entry has no intervals")
        rows = align_rows(parse_score_rows(e.score, e.utterance_id), e.intervals, cfg)
        frames = None
        if with_frames:
            if e.wav is None:
                raise FormatError(f"{e.utterance_id}: manifest entry has no audio")
            frames = featurize(e.wav, cfg)
            total = sum(r.gt_dur for r in rows)
            if abs(frames.shape[0] - total) > 1:
                raise FormatError(f"{e.utterance_id}: {frames.shape[0]} audio frames vs "
                                  f"{total} annotated frames")
            frames = _fit_length(frames, total)
        items.append(CorpusItem(e.utterance_id, e.singer_id, rows, frames))
    return items


def _fit_length(frames: np.ndarray, n: int) -> np.ndarray:
    # off-by-one frame counts come from the final partial hop
    if frames.shape[0] >= n:
        return frames[:n]
    return np.concatenate([frames, np.repeat(frames[-1:], n - frames.shape[0], axis=0)])


def save_stats(stats: NormStats, path) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), sort_keys=True, indent=2) + "\n")


def load_stats(path) -> NormStats:
    try:
        return NormStats.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: not a stats file ({exc})") from None


def speaker_map(items: Sequence[CorpusItem]) -> dict[str, int]:
    return {s: i for i, s in enumerate(sorted({it.singer_id for it in items}))}


# --- models --------------------------------------------------------------

def duration_model(cfg: RunConfig, use_syllable_term: Optional[bool] = None) -> DurationModel:
    d = asdict(cfg.duration)
    for k in ("loss_domain", "target", "consonant_cap_frames", "reapportion"):
        d.pop(k)
    if use_syllable_term is not None:
        d["use_syllable_term"] = use_syllable_term
    return DurationModel(seed=cfg.seed, dur_tolerance=cfg.metrics.dur_tolerance, **d)


def train_duration_model(items: Sequence[CorpusItem], cfg: RunConfig,
                         use_syllable_term: Optional[bool] = None) -> DurationModel:
    model = duration_model(cfg, use_syllable_term)
    return model.fit([it.rows for it in items])


def acoustic_model(cfg: RunConfig, n_speakers: int) -> AcousticModel:
    a = asdict(cfg.acoustic)
    for k in ("loss_dim_reduction", "positional_encoding", "dat_during_finetune"):
        a.pop(k)
    return AcousticModel(n_speakers=n_speakers, seed=cfg.seed, **a)


def acoustic_examples(items: Sequence[CorpusItem], stats: NormStats,
                      speakers: dict[str, int]) -> list[AcousticExample]:
    return [AcousticExample(it.rows, normalize(it.frames, stats), speakers[it.singer_id],
                            it.utterance_id) for it in items]


def train_acoustic_model(items: Sequence[CorpusItem], cfg: RunConfig, recipe: str = "pretrain_multi_singer",
                         init=None) -> AcousticModel:
    """Train from a corpus; the checkpoint metadata carries norm stats and the speaker map."""
    if init is not None:
        base = AcousticModel.load(init)
        stats = NormStats.from_dict(base.checkpoint_meta_["norm_stats"])
        speakers = base.checkpoint_meta_["speakers"]
        missing = sorted({it.singer_id for it in items} - set(speakers))
        if missing:
            raise FormatError(f"singer(s) {missing} not in the pretrained speaker map")
        n_speakers = base.n_speakers
    else:
        stats = minmax_fit([it.frames for it in items])
        speakers = speaker_map(items)
        n_speakers = len(speakers)
    model = acoustic_model(cfg, n_speakers)
    model.fit(acoustic_examples(items, stats, speakers), recipe=recipe, init=init)
    model.norm_stats_ = stats
    model.speakers_ = speakers
    return model


def save_acoustic(model: AcousticModel, path) -> None:
    model.save(path, {"norm_stats": model.norm_stats_.to_dict(), "speakers": model.speakers_})


def load_acoustic(path) -> AcousticModel:
    model = AcousticModel.load(path)
    meta = model.checkpoint_meta_
    if "norm_stats" not in meta or "speakers" not in meta:
        raise FormatError(f"{path}: acoustic checkpoint lacks norm stats or speaker map")
    model.norm_stats_ = NormStats.from_dict(meta["norm_stats"])
    model.speakers_ = meta["speakers"]
    return model


def predict_durations(model: DurationModel, rows: Sequence[PhonemeRow], postprocess: bool = True) -> np.ndarray:
    return np.asarray(model.predict(list(rows), postprocess_output=postprocess))


def synth_features(model: AcousticModel, rows: Sequence[PhonemeRow], durations,
                   singer_id: Optional[str] = None) -> np.ndarray:
    """Denormalized (T, 26) frames for the given rows and integer durations."""
    speakers = model.speakers_
    singer_id = singer_id if singer_id is not None else sorted(speakers)[0]
    if singer_id not in speakers:
        raise ValueError(f"unknown singer {singer_id!r}; known: {sorted(speakers)}")
    durations = np.rint(np.asarray(durations, dtype=np.float64)).astype(int)
    pred = model.predict(list(rows), durations, speakers[singer_id])
    return denormalize(pred, model.norm_stats_)


# --- augmentation --------------------------------------------------------

def segment_classes(cfg: RunConfig) -> list[SegmentClass]:
    return [SegmentClass(lo, hi) for lo, hi in cfg.augment.classes]


def augment_manifest(entries: Sequence[ManifestEntry], cfg: RunConfig):
    items = load_corpus(entries, cfg, with_frames=False)
    return vs_augment([it.rows for it in items], segment_classes(cfg))


def transpose_corpus(entries: Sequence[ManifestEntry], cfg: RunConfig, out_dir) -> list[dict]:
    """Write transposed copies of every score; intervals are reused unchanged."""
    out_dir = Path(out_dir)
    (out_dir / "scores").mkdir(parents=True, exist_ok=True)
    lines = []
    for e in entries:
        score = parse_musicxml(e.score)
        for k in cfg.augment.transpose_semitones:
            uid = f"{e.utterance_id}_t{k:+d}"
            target = out_dir / "scores" / f"{uid}.musicxml"
            target.write_bytes(write_musicxml(transpose_score(score, k)))
            entry = {"utterance_id": uid, "singer_id": e.singer_id, "score": f"scores/{uid}.musicxml",
                     "transpose": k}
            if e.intervals is not None:
                entry["intervals"] = str(Path(e.intervals).resolve())
            lines.append(entry)
    return lines


# --- evaluation and the end-to-end run -----------------------------------

def duration_report(pred: Sequence[int], ref: Sequence[int], cfg: RunConfig) -> MetricsReport:
    tol = cfg.metrics.dur_tolerance
    return MetricsReport(dur_acc=dur_acc(pred, ref, tol), dur_corr=dur_corr(pred, ref),
                         config={"dur_tolerance": tol})


def run_pipeline(manifest, cfg: RunConfig, out_dir=None) -> MetricsReport:
    """Parse, align, featurize, train both models, synthesize and evaluate.

    Feature metrics compare synthesized frames (ground-truth lengths, so
    frames align) against the analysed audio; duration metrics compare
    post-processed predictions with the annotation. All utterances are used
    for training and evaluation.
    """
    entries = read_corpus_manifest(manifest)
    items = load_corpus(entries, cfg, with_frames=True)
    dur = train_duration_model(items, cfg)
    ac = train_acoustic_model(items, cfg)
    pred_d, ref_d, pred_f, ref_f = [], [], [], []
    for it in items:
        pred_d.extend(predict_durations(dur, it.rows).tolist())
        ref_d.extend(r.gt_dur for r in it.rows)
        pred_f.append(synth_features(ac, it.rows, [r.gt_dur for r in it.rows], it.singer_id))
        ref_f.append(it.frames)
    feat = evaluate_features(np.concatenate(pred_f), np.concatenate(ref_f),
                             cfg.metrics.voicing_threshold)
    tol = cfg.metrics.dur_tolerance
    report = MetricsReport(
        f0_rmse=feat.f0_rmse, f0_corr=feat.f0_corr, vuv_error=feat.vuv_error, bfccd=feat.bfccd,
        dur_acc=dur_acc(pred_d, ref_d, tol), dur_corr=dur_corr(pred_d, ref_d),
        config={"dur_tolerance": tol, "voicing_threshold": cfg.metrics.voicing_threshold,
                "seed": cfg.seed, "n_utterances": len(items)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dur.save(out / "duration.ckpt")
        save_acoustic(ac, out / "acoustic.ckpt")
        (out / "report.json").write_text(report.to_json() + "\n")
    return report


__all__ = [
    "ManifestEntry", "CorpusItem", "read_corpus_manifest", "parse_score_rows", "align_rows",
    "featurize", "load_corpus", "save_stats", "load_stats", "speaker_map", "duration_model",
    "train_duration_model", "acoustic_model", "acoustic_examples", "train_acoustic_model",
    "save_acoustic", "load_acoustic", "predict_durations", "synth_features", "segment_classes",
    "augment_manifest", "transpose_corpus", "duration_report", "run_pipeline",
    "model_duration_scores",
]
