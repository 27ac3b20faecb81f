"""Phoneme-level row assembly and alignment against annotated interval files."""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import AlignmentError, FormatError, IntervalError, ScoreValidationError
from .score import NotePitch, Score, beats_to_frames, phonemize, seconds_to_frames
from .vocab import PHONEME_TYPES, PHONEMES, SILENCE, SLURS, phoneme_id, ptype_id, pitch_id, slur_id

logger = logging.getLogger(__name__)

SILENCE_LABELS = frozenset({"sil", "sp", "SP", "AP", "pau", "<sil>", "silence", ""})
SILENCE_MERGE_SEC = Fraction(3, 100)
ROWS_MAGIC = b"WSROWS1"
_ROWS_VERSION = 1


@dataclass(frozen=True)
class IntervalEntry:
    start: Fraction
    end: Fraction
    label: str

    @property
    def is_silence(self) -> bool:
        return self.label == SILENCE

    @property
    def duration(self) -> Fraction:
        return self.end - self.start


@dataclass(frozen=True)
class PhonemeRow:
    ph: int
    pt: int
    pi: NotePitch
    sr: str
    bt: int
    nominal_dur: int
    gt_dur: int | None = None
    syllable_index: int = 0
    utterance_id: str = ""

    @property
    def phoneme(self) -> str:
        return PHONEMES[self.ph]

    @property
    def ptype(self) -> str:
        return PHONEME_TYPES[self.pt]

    @property
    def is_silence(self) -> bool:
        return self.ptype == "silence"


@dataclass
class Utterance:
    rows: list[PhonemeRow]
    singer_id: str = ""
    span: tuple[float, float] = (0.0, 0.0)
    utterance_id: str = ""

    def __post_init__(self):
        idx = [r.syllable_index for r in self.rows]
        if any(b < a for a, b in zip(idx, idx[1:])):
            raise ScoreValidationError("syllable_index must be non-decreasing")

    @property
    def gt_frames(self) -> int:
        return sum(r.gt_dur for r in self.rows)


def _make_row(unit, note, bt, nominal, syllable_index, utterance_id) -> PhonemeRow:
    return PhonemeRow(
        ph=phoneme_id(unit.phoneme),
        pt=ptype_id(unit.ptype),
        pi=note.pitch,
        sr=note.slur,
        bt=bt,
        nominal_dur=nominal,
        syllable_index=syllable_index,
        utterance_id=utterance_id,
    )


def build_rows(score: Score, utterance_id: str = "") -> list[PhonemeRow]:
    """Expand a score into phoneme rows with nominal (score-derived) durations.

    Each note is converted to frames on its own. A two-phoneme syllable splits
    its first note evenly between initial and final; every further note of a
    melisma repeats the final.
    """
    rows = []
    for s_idx, event in enumerate(score.events):
        units = phonemize(event)
        frames = [beats_to_frames(n.beats, score.bpm) for n in event.notes]
        if event.is_rest:
            d = sum(frames)
            rows.append(_make_row(units[0], event.notes[0], d, d, s_idx, utterance_id))
            continue
        first = event.notes[0]
        if len(units) == 2:
            d = frames[0]
            head = math_round_half(d)
            if head < 1 or d - head < 1:
                raise ScoreValidationError(
                    f"note of {d} frames is too short to split {event.pinyin!r}")
            rows.append(_make_row(units[0], first, d, head, s_idx, utterance_id))
            rows.append(_make_row(units[1], first, d, d - head, s_idx, utterance_id))
        else:
            rows.append(_make_row(units[0], first, frames[0], frames[0], s_idx, utterance_id))
        for note, d in zip(event.notes[1:], frames[1:]):
            rows.append(_make_row(units[-1], note, d, d, s_idx, utterance_id))
    return rows


def math_round_half(d: int) -> int:
    """round(d / 2) with halves going away from zero."""
    return (d + 1) // 2


def parse_intervals(text: str) -> list[IntervalEntry]:
    """Parse ``start<TAB>end<TAB>label`` lines, filling gaps with silence."""
    entries: list[IntervalEntry] = []
    cursor = Fraction(0)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3:
            raise IntervalError(f"malformed interval at line {lineno}: {line!r}")
        try:
            start, end = Fraction(parts[0].strip()), Fraction(parts[1].strip())
        except ValueError:
            raise IntervalError(f"bad time value at line {lineno}") from None
        label = parts[2].strip()
        if start < 0:
            raise IntervalError(f"negative start time at line {lineno}")
        if end < start:
            raise IntervalError(f"negative duration at line {lineno}")
        if end == start:
            raise IntervalError(f"empty interval at line {lineno}")
        if start < cursor:
            raise IntervalError(f"overlap at line {lineno}")
        if start > cursor:
            entries.append(IntervalEntry(cursor, start, SILENCE))
        entries.append(IntervalEntry(start, end, SILENCE if label in SILENCE_LABELS else label))
        cursor = end
    return _merge_silences(entries)


def _merge_silences(entries: list[IntervalEntry]) -> list[IntervalEntry]:
    merged: list[IntervalEntry] = []
    for e in entries:
        if merged and e.is_silence and merged[-1].is_silence:
            merged[-1] = IntervalEntry(merged[-1].start, e.end, SILENCE)
        else:
            merged.append(e)
    return merged


def format_intervals(entries: Sequence[IntervalEntry]) -> str:
    return "".join(f"{float(e.start):.4f}\t{float(e.end):.4f}\t{e.label}\n" for e in entries)


def _absorb_short_silences(entries, threshold) -> list[IntervalEntry]:
    out: list[IntervalEntry] = []
    pending_start = None
    for e in entries:
        if e.is_silence and e.duration < threshold and len(entries) > 1:
            if out:
                out[-1] = replace(out[-1], end=e.end)
            else:
                pending_start = e.start
            continue
        if pending_start is not None:
            e = replace(e, start=pending_start)
            pending_start = None
        out.append(e)
    return _merge_silences(out)


def attach_ground_truth(
    rows: Sequence[PhonemeRow],
    intervals: Sequence[IntervalEntry],
    silence_threshold: float | Fraction = SILENCE_MERGE_SEC,
) -> list[PhonemeRow]:
    """Return copies of ``rows`` with ``gt_dur`` taken from the matched intervals.

    Silences shorter than ``silence_threshold`` seconds are annotation jitter
    and are folded into the preceding entry before matching. Boundaries are
    quantized to frames, so the durations telescope to the span length.
    """
    entries = _absorb_short_silences(list(intervals), Fraction(silence_threshold))
    for i, (row, entry) in enumerate(zip(rows, entries)):
        if row.phoneme != entry.label:
            raise AlignmentError(
                f"label mismatch at index {i}: row {row.phoneme!r} vs interval {entry.label!r}")
    if len(rows) != len(entries):
        raise AlignmentError(f"count mismatch: {len(rows)} rows vs {len(entries)} intervals")
    out = []
    for row, entry in zip(rows, entries):
        gt = seconds_to_frames(entry.end) - seconds_to_frames(entry.start)
        if gt < 1:
            logger.warning("interval %s shorter than one frame; using 1", entry)
            gt = 1
        out.append(replace(row, gt_dur=gt))
    return out


def syllable_groups(rows: Sequence[PhonemeRow]) -> list[np.ndarray]:
    """Row indices of each syllable, in order."""
    groups: list[list[int]] = []
    prev = None
    for i, r in enumerate(rows):
        if r.syllable_index != prev:
            groups.append([])
            prev = r.syllable_index
        groups[-1].append(i)
    return [np.asarray(g, dtype=np.intp) for g in groups]


def row_arrays(rows: Sequence[PhonemeRow]) -> dict[str, np.ndarray]:
    """Integer model inputs for a row sequence."""
    return {
        "ph": np.array([r.ph for r in rows], dtype=np.intp),
        "pt": np.array([r.pt for r in rows], dtype=np.intp),
        "pi": np.array([pitch_id(r.pi.midi) for r in rows], dtype=np.intp),
        "sr": np.array([slur_id(r.sr) for r in rows], dtype=np.intp),
        "bt": np.array([r.bt for r in rows], dtype=np.float64),
    }


# --- serialization -------------------------------------------------------

_COLUMNS = ("ph", "pt", "midi", "sr", "bt", "nominal_dur", "gt_dur", "syllable_index", "utt")


def write_rows(rows: Sequence[PhonemeRow], path) -> None:
    """Columnar little-endian binary: magic, version, counts, utterance table, int32 columns."""
    utts = list(dict.fromkeys(r.utterance_id for r in rows))
    utt_index = {u: i for i, u in enumerate(utts)}
    buf = io.BytesIO()
    buf.write(ROWS_MAGIC)
    buf.write(struct.pack("<BII", _ROWS_VERSION, len(rows), len(utts)))
    for u in utts:
        enc = u.encode("utf-8")
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
    cols = {
        "ph": [r.ph for r in rows],
        "pt": [r.pt for r in rows],
        "midi": [-1 if r.pi.rest else r.pi.midi for r in rows],
        "sr": [slur_id(r.sr) for r in rows],
        "bt": [r.bt for r in rows],
        "nominal_dur": [r.nominal_dur for r in rows],
        "gt_dur": [-1 if r.gt_dur is None else r.gt_dur for r in rows],
        "syllable_index": [r.syllable_index for r in rows],
        "utt": [utt_index[r.utterance_id] for r in rows],
    }
    for name in _COLUMNS:
        buf.write(np.asarray(cols[name], dtype="<i4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_rows(path) -> list[PhonemeRow]:
    data = Path(path).read_bytes()
    if data[:7] != ROWS_MAGIC:
        raise FormatError(f"{path}: not a rows file (bad magic)")
    try:
        version, n, n_utts = struct.unpack_from("<BII", data, 7)
        if version != _ROWS_VERSION:
            raise FormatError(f"{path}: unsupported rows version {version}")
        off = 7 + struct.calcsize("<BII")
        utts = []
        for _ in range(n_utts):
            (size,) = struct.unpack_from("<H", data, off)
            off += 2
            utts.append(data[off:off + size].decode("utf-8"))
            off += size
        cols = {}
        for name in _COLUMNS:
            cols[name] = np.frombuffer(data, dtype="<i4", count=n, offset=off)
            off += 4 * n
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated rows file ({exc})") from None
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes in rows file")
    return [
        PhonemeRow(
            ph=int(cols["ph"][i]),
            pt=int(cols["pt"][i]),
            pi=NotePitch.silence() if cols["midi"][i] < 0 else NotePitch(int(cols["midi"][i])),
            sr=SLURS[int(cols["sr"][i])],
            bt=int(cols["bt"][i]),
            nominal_dur=int(cols["nominal_dur"][i]),
            gt_dur=None if cols["gt_dur"][i] < 0 else int(cols["gt_dur"][i]),
            syllable_index=int(cols["syllable_index"][i]),
            utterance_id=utts[int(cols["utt"][i])],
        )
        for i in range(n)
    ]


_TSV_HEADER = ("utterance_id", "syllable_index", "phoneme", "ptype", "pitch", "midi",
               "slur", "bt", "nominal_dur", "gt_dur")


def rows_to_tsv(rows: Sequence[PhonemeRow], extra: dict[str, Sequence] | None = None) -> str:
    """Human-readable dump; ``extra`` adds named per-row columns (e.g. ``pred_dur``)."""
    extra = extra or {}
    lines = ["\t".join(_TSV_HEADER + tuple(extra))]
    for i, r in enumerate(rows):
        fields = [
            r.utterance_id, str(r.syllable_index), r.phoneme, r.ptype, r.pi.name,
            "" if r.pi.rest else str(r.pi.midi), r.sr, str(r.bt), str(r.nominal_dur),
            "" if r.gt_dur is None else str(r.gt_dur),
        ]
        fields += [str(col[i]) for col in extra.values()]
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def rows_from_tsv(text: str) -> tuple[list[PhonemeRow], dict[str, list[str]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty rows TSV")
    header = lines[0].split("\t")
    if tuple(header[:len(_TSV_HEADER)]) != _TSV_HEADER:
        raise FormatError("rows TSV header mismatch")
    extra_names = header[len(_TSV_HEADER):]
    rows, extra = [], {k: [] for k in extra_names}
    for lineno, line in enumerate(lines[1:], 2):
        f = line.split("\t")
        if len(f) != len(header):
            raise FormatError(f"rows TSV line {lineno}: expected {len(header)} fields")
        rows.append(PhonemeRow(
            ph=phoneme_id(f[2]),
            pt=ptype_id(f[3]),
            pi=NotePitch.silence() if f[5] == "" else NotePitch(int(f[5])),
            sr=f[6],
            bt=int(f[7]),
            nominal_dur=int(f[8]),
            gt_dur=None if f[9] == "" else int(f[9]),
            syllable_index=int(f[1]),
            utterance_id=f[0],
        ))
        for k, v in zip(extra_names, f[len(_TSV_HEADER):]):
            extra[k].append(v)
    return rows, extra
