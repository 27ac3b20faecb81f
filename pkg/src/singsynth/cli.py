"""``singsynth`` command line.

Every subcommand exits 0 on success. Failures print one JSON line
``{"error": <kind>, "message": ..., "command": ...}`` on stderr and exit 1;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .augment import write_manifest
from .config import RunConfig
from .dsp import minmax_fit, normalize, read_features, write_features
from .duration import DurationModel
from .exceptions import SingSynthError
from .metrics import evaluate_features
from .sequence import read_rows, rows_from_tsv, rows_to_tsv, write_rows
from .synth_corpus import generate_corpus, write_corpus

logger = logging.getLogger("singsynth")

RECIPE_NAMES = {"pretrain": "pretrain_multi_singer", "finetune": "finetune_single"}


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _read_rows_any(path):
    """Rows from a WSROWS1 file or a rows TSV; returns (rows, extra columns)."""
    path = Path(path)
    head = path.read_bytes()[:7]
    if head == b"WSROWS1":
        return read_rows(path), {}
    return rows_from_tsv(path.read_text(encoding="utf-8"))


def _write_rows_any(rows, out, extra=None):
    if out is None:
        sys.stdout.write(rows_to_tsv(rows, extra))
    elif str(out).endswith(".tsv"):
        Path(out).write_text(rows_to_tsv(rows, extra), encoding="utf-8")
    else:
        if extra:
            raise SingSynthError("extra columns need a .tsv output")
        write_rows(rows, out)


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


# --- subcommands ---------------------------------------------------------

def cmd_parse(args, cfg):
    rows = pl.parse_score_rows(args.score, args.utterance_id or "", args.lexicon)
    _write_rows_any(rows, args.output)


def cmd_align(args, cfg):
    rows, _ = _read_rows_any(args.rows)
    _write_rows_any(pl.align_rows(rows, args.intervals, cfg), args.output)


def cmd_featurize(args, cfg):
    frames = [pl.featurize(p, cfg) for p in args.audio]
    if args.stats:
        stats_path = Path(args.stats)
        if stats_path.exists() and not args.fit_stats:
            stats = pl.load_stats(stats_path)
        else:
            stats = minmax_fit(frames)
            pl.save_stats(stats, stats_path)
        frames = [normalize(f, stats) for f in frames]
    if len(args.audio) == 1 and not Path(args.output).is_dir():
        write_features(args.output, frames[0])
        return
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for p, f in zip(args.audio, frames):
        write_features(out / (Path(p).stem + ".feat"), f)


def cmd_augment(args, cfg):
    if args.mode != "vs":
        raise SingSynthError(f"unknown augmentation mode {args.mode!r}")
    entries = pl.read_corpus_manifest(args.manifest)
    clips = pl.augment_manifest(entries, cfg)
    write_manifest(clips, args.output)
    if args.transpose:
        out = Path(args.output)
        lines = pl.transpose_corpus(entries, cfg, out.parent / (out.stem + "_transposed"))
        with open(out.parent / (out.stem + "_transposed") / "manifest.jsonl", "w") as fh:
            for line in lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    flagged = sum(c.flag is not None for c in clips)
    logger.info("%d clips written (%d flagged)", len(clips), flagged)


def cmd_train_dur(args, cfg):
    items = pl.load_corpus(pl.read_corpus_manifest(args.manifest), cfg, with_frames=False)
    model = pl.train_duration_model(items, cfg, use_syllable_term=False if args.no_syllable_loss else None)
    model.save(args.output)
    report = args.report or str(args.output) + ".report.json"
    Path(report).write_text(model.report_.to_json() + "\n")


def cmd_predict_dur(args, cfg):
    model = DurationModel.load(args.checkpoint)
    rows, _ = _read_rows_any(args.rows)
    by_utt = {}
    for r in rows:
        by_utt.setdefault(r.utterance_id, []).append(r)
    pred = []
    for utt_rows in by_utt.values():
        d = pl.predict_durations(model, utt_rows, postprocess=args.postprocess)
        pred.extend(str(int(x)) if args.postprocess else f"{x:.4f}" for x in d)
    ordered = [r for utt_rows in by_utt.values() for r in utt_rows]
    text = rows_to_tsv(ordered, {"pred_dur": pred})
    _emit(text, args.output)


def cmd_train_ac(args, cfg):
    recipe = RECIPE_NAMES[args.recipe]
    if recipe == "finetune_single" and not args.init:
        raise SingSynthError("--recipe finetune requires --init <checkpoint>")
    entries = pl.read_corpus_manifest(args.manifest)
    if args.singer is not None:
        entries = [e for e in entries if e.singer_id == args.singer]
        if not entries:
            raise SingSynthError(f"no manifest entries for singer {args.singer!r}")
    items = pl.load_corpus(entries, cfg, with_frames=True)
    model = pl.train_acoustic_model(items, cfg, recipe, init=args.init)
    pl.save_acoustic(model, args.output)
    report = args.report or str(args.output) + ".report.json"
    Path(report).write_text(model.report_.to_json() + "\n")


def cmd_synth_features(args, cfg):
    model = pl.load_acoustic(args.checkpoint)
    rows, extra = _read_rows_any(args.durations)
    if len({r.utterance_id for r in rows}) != 1:
        raise SingSynthError("synth-features takes the rows of exactly one utterance")
    if "pred_dur" in extra:
        durs = [float(x) for x in extra["pred_dur"]]
    elif all(r.gt_dur is not None for r in rows):
        durs = [r.gt_dur for r in rows]
    else:
        raise SingSynthError("durations file has neither a pred_dur column nor gt_dur values")
    frames = pl.synth_features(model, rows, durs, args.singer)
    write_features(args.output, frames)


def _durations_from(path):
    """Durations from a rows TSV (pred_dur if present, else gt_dur) or one integer per line."""
    text = Path(path).read_text(encoding="utf-8")
    first = text.split("\n", 1)[0]
    if first.startswith("utterance_id"):
        rows, extra = rows_from_tsv(text)
        if "pred_dur" in extra:
            return [float(x) for x in extra["pred_dur"]]
        if any(r.gt_dur is None for r in rows):
            raise SingSynthError(f"{path}: rows without durations")
        return [r.gt_dur for r in rows]
    return [float(x) for x in text.split()]


def cmd_evaluate(args, cfg):
    tol = args.tolerance if args.tolerance is not None else cfg.metrics.dur_tolerance
    thr = args.voicing_threshold if args.voicing_threshold is not None else cfg.metrics.voicing_threshold
    if args.kind == "dur":
        report = pl.duration_report(_durations_from(args.pred), _durations_from(args.ref),
                                    dataclasses.replace(cfg, metrics=dataclasses.replace(
                                        cfg.metrics, dur_tolerance=tol)))
    else:
        full = evaluate_features(read_features(args.pred), read_features(args.ref), thr)
        if args.kind == "f0":
            full = dataclasses.replace(full, bfccd=None)
        report = full
    _emit(report.to_json(), args.output)


def cmd_gen_synth_corpus(args, cfg):
    songs = generate_corpus(args.singers, args.songs, args.seed if args.seed is not None else cfg.seed,
                            phrases=tuple(args.phrases), syllables=tuple(args.syllables),
                            with_audio=not args.no_audio)
    manifest = write_corpus(songs, args.output)
    logger.info("wrote %d songs; manifest %s", len(songs), manifest)


def cmd_run(args, cfg):
    report = pl.run_pipeline(args.manifest, cfg, args.output)
    _emit(report.to_json(), None)


def cmd_config(args, cfg):
    _emit(cfg.to_toml(), args.output)


# --- argument parsing ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="singsynth", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML run configuration (schema_version = 1)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("parse", help="MusicXML score -> phoneme rows")
    s.add_argument("score")
    s.add_argument("--lexicon", help="hanzi<TAB>pinyin lexicon for non-pinyin lyrics")
    s.add_argument("--utterance-id")
    s.add_argument("-o", "--output", help=".tsv for text rows, anything else for WSROWS1 (default: TSV on stdout)")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("align", help="attach ground-truth durations from an interval TSV")
    s.add_argument("rows")
    s.add_argument("intervals")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("featurize", help="WAV -> 26-dim WSFEAT1 frames")
    s.add_argument("audio", nargs="+")
    s.add_argument("-o", "--output", required=True, help="file for one input, directory for several")
    s.add_argument("--stats", help="min/max stats JSON; applied if it exists, otherwise fitted and written")
    s.add_argument("--fit-stats", action="store_true", help="refit and overwrite --stats")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("augment", help="variable-duration segmentation -> clip manifest")
    s.add_argument("manifest")
    s.add_argument("--mode", default="vs", choices=["vs"])
    s.add_argument("--transpose", action="store_true", help="also write transposed score copies")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train-dur", help="train the duration model")
    s.add_argument("manifest")
    s.add_argument("--no-syllable-loss", action="store_true")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_train_dur)

    s = sub.add_parser("predict-dur", help="predict frames per row")
    s.add_argument("checkpoint")
    s.add_argument("rows")
    s.add_argument("--postprocess", action="store_true", help="integer frames matching note lengths")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_predict_dur)

    s = sub.add_parser("train-ac", help="train the acoustic model")
    s.add_argument("manifest")
    s.add_argument("--recipe", choices=sorted(RECIPE_NAMES), default="pretrain")
    s.add_argument("--init", help="pretrained acoustic checkpoint (required for finetune)")
    s.add_argument("--singer", help="restrict the manifest to one singer")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_train_ac)

    s = sub.add_parser("synth-features", help="acoustic checkpoint + durations -> denormalized WSFEAT1")
    s.add_argument("checkpoint")
    s.add_argument("durations", help="rows TSV with a pred_dur column (from predict-dur) or gt_dur values")
    s.add_argument("--singer")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth_features)

    s = sub.add_parser("evaluate", help="metrics report JSON")
    s.add_argument("pred")
    s.add_argument("ref")
    s.add_argument("--kind", choices=["dur", "f0", "feat"], required=True)
    s.add_argument("--tolerance", type=float, help="Dur Acc tolerance in frames")
    s.add_argument("--voicing-threshold", type=float)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gen-synth-corpus", help="write a seeded synthetic corpus")
    s.add_argument("--singers", type=int, default=2)
    s.add_argument("--songs", type=int, default=10)
    s.add_argument("--phrases", type=int, nargs=2, default=[4, 7], metavar=("MIN", "MAX"))
    s.add_argument("--syllables", type=int, nargs=2, default=[2, 5], metavar=("MIN", "MAX"))
    s.add_argument("--no-audio", action="store_true")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_gen_synth_corpus)

    s = sub.add_parser("run", help="parse, align, featurize, train, synthesize and evaluate")
    s.add_argument("manifest")
    s.add_argument("-o", "--output", help="directory for checkpoints and report.json")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("config", help="print the effective configuration as TOML")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_config)
    return p


def _error_line(kind: str, message: str, command) -> str:
    return json.dumps({"error": kind, "message": message, "command": command}, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except (SingSynthError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(_error_line(type(exc).__name__, str(exc), args.command) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
