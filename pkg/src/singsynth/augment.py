"""Variable-duration segmentation of annotated songs into three clip-length classes."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .score import transpose_score  # noqa: F401  (re-exported: score-level augmentation)
from .sequence import PhonemeRow
from .validation import utterance_rows

logger = logging.getLogger(__name__)

PAUSE_FRAMES = 10
FRAMES_PER_SECOND = 100


@dataclass(frozen=True)
class SegmentClass:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0 <= self.lower < self.upper:
            raise ValueError(f"bad class bounds ({self.lower}, {self.upper}]")

    @property
    def tag(self) -> str:
        return f"{self.lower:g}-{self.upper:g}"

    def contains(self, seconds: float) -> bool:
        return self.lower < seconds <= self.upper


SEGMENT_CLASSES = (SegmentClass(0, 5), SegmentClass(5, 8), SegmentClass(8, 12))


@dataclass(frozen=True)
class CutPoint:
    frame: int
    row: Optional[int]  # index of the pause row; None at the song edges


@dataclass(frozen=True)
class Clip:
    clip_id: str
    utterance_id: str
    start_sec: float
    end_sec: float
    row_start: int
    row_end: int  # exclusive
    segment_class: str
    flag: Optional[str] = None  # "over_length" / "under_length" when outside the class

    @property
    def seconds(self) -> float:
        return self.end_sec - self.start_sec

    def manifest_entry(self) -> dict:
        return {"clip_id": self.clip_id, "utterance_id": self.utterance_id,
                "start_sec": self.start_sec, "end_sec": self.end_sec, "class": self.segment_class,
                "row_start": self.row_start, "row_end": self.row_end, "flag": self.flag}


def _edges(rows) -> np.ndarray:
    if any(r.gt_dur is None for r in rows):
        raise ValueError("segmentation needs ground-truth durations")
    return np.cumsum([0] + [r.gt_dur for r in rows])


def _is_pause(row: PhonemeRow) -> bool:
    return row.is_silence and row.gt_dur >= PAUSE_FRAMES


def detect_cut_points(rows: Sequence[PhonemeRow]) -> list[CutPoint]:
    """Song start and end plus the midpoint of every interior pause (silence ≥ 10 frames)."""
    rows = utterance_rows(rows)
    edges = _edges(rows)
    cuts = [CutPoint(0, None)]
    for i in range(1, len(rows) - 1):
        if _is_pause(rows[i]):
            cuts.append(CutPoint(int((edges[i] + edges[i + 1]) // 2), i))
    cuts.append(CutPoint(int(edges[-1]), None))
    return cuts


def pause_spans(rows: Sequence[PhonemeRow]) -> list[tuple[int, int]]:
    """Maximal row ranges ``[a, b)`` between pauses, trimmed of edge silences."""
    spans, start = [], None
    for i, r in enumerate(rows):
        if _is_pause(r) or (r.is_silence and (start is None or i == len(rows) - 1)):
            if start is not None:
                spans.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        spans.append((start, len(rows)))
    return spans


def _partition(n_spans: int, frames, lower: int, upper: int) -> list[list[int]]:
    """Exact search for the best grouping of consecutive spans.

    Cost, compared lexicographically: number of clips under the lower bound,
    total frames over the upper bound, then preference for the longest
    first clip. When an in-bounds grouping exists this is the greedy
    accumulation rule with lookahead, so no short tail is stranded.
    """

    @lru_cache(maxsize=None)
    def best(i: int) -> tuple[tuple[int, int], tuple[int, ...]]:
        if i == n_spans:
            return (0, 0), ()
        choice = None
        for j in range(n_spans - 1, i - 1, -1):
            length = frames(i, j)
            cost = (int(length <= lower), max(0, length - upper))
            rest_cost, rest = best(j + 1)
            total = (cost[0] + rest_cost[0], cost[1] + rest_cost[1])
            if choice is None or total < choice[0]:
                choice = (total, (j,) + rest)
        return choice

    groups, start = [], 0
    for j in best(0)[1]:
        groups.append(list(range(start, j + 1)))
        start = j + 1
    return groups


def segment(rows: Sequence[PhonemeRow], cls: SegmentClass, utterance_id: str = "") -> list[Clip]:
    """Group pause-delimited spans into clips of the given length class.

    Spans accumulate left to right; a clip closes before the span that would
    push it past the upper bound, choosing the longest clip that still lets
    the rest of the song be grouped in bounds. A span longer than the upper
    bound becomes an over-length clip (flagged, logged); a stretch that
    cannot be grouped in bounds is absorbed into a neighbouring clip, which
    is then flagged over-length rather than left short. Only a song shorter
    than the lower bound yields an under-length clip.
    """
    rows = utterance_rows(rows)
    utterance_id = utterance_id or (rows[0].utterance_id if rows else "")
    edges = _edges(rows)
    spans = pause_spans(rows)

    def frames(a, b):
        return int(edges[spans[b][1]] - edges[spans[a][0]])

    lower = int(round(cls.lower * FRAMES_PER_SECOND))
    upper = int(round(cls.upper * FRAMES_PER_SECOND))
    groups = _partition(len(spans), frames, lower, upper) if spans else []

    clips = []
    for n, g in enumerate(groups):
        a, b = spans[g[0]][0], spans[g[-1]][1]
        start, end = float(edges[a]) / FRAMES_PER_SECOND, float(edges[b]) / FRAMES_PER_SECOND
        length = frames(g[0], g[-1])
        flag = None if lower < length <= upper else "over_length" if length > upper else "under_length"
        if flag:
            logger.warning("%s: %s clip of %.2f s for class %s", utterance_id, flag,
                           length / FRAMES_PER_SECOND, cls.tag)
        clips.append(Clip(f"{utterance_id}_{cls.tag}_{n:03d}", utterance_id, start, end, a, b,
                          cls.tag, flag))
    return clips


def vs_augment(corpus, classes: Sequence[SegmentClass] = SEGMENT_CLASSES) -> list[Clip]:
    """Union of the per-class segmentations of every utterance, in a fixed order."""
    out = []
    for u in corpus:
        rows = utterance_rows(u)
        uid = getattr(u, "utterance_id", "") or rows[0].utterance_id
        for cls in classes:
            out.extend(segment(rows, cls, uid))
    return out


def clip_rows(rows: Sequence[PhonemeRow], clip: Clip) -> list[PhonemeRow]:
    return list(rows[clip.row_start:clip.row_end])


def clip_frames(frames: np.ndarray, rows: Sequence[PhonemeRow], clip: Clip) -> np.ndarray:
    """The feature frames belonging to a clip's rows."""
    edges = _edges(rows)
    return frames[int(edges[clip.row_start]):int(edges[clip.row_end])]


def write_manifest(clips: Sequence[Clip], path) -> None:
    with open(path, "w") as fh:
        for c in clips:
            fh.write(json.dumps(c.manifest_entry(), sort_keys=True) + "\n")


def read_manifest(path) -> list[Clip]:
    clips = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                clips.append(Clip(d["clip_id"], d["utterance_id"], d["start_sec"], d["end_sec"],
                                  d["row_start"], d["row_end"], d["class"], d.get("flag")))
    return clips


def clip_to_dict(clip: Clip) -> dict:
    return asdict(clip)
