"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import ShapeError
from .sequence import PhonemeRow, Utterance


def utterance_rows(u) -> list[PhonemeRow]:
    """Rows of an :class:`Utterance` or a plain row sequence."""
    if isinstance(u, Utterance):
        return list(u.rows)
    if isinstance(u, (list, tuple)) and all(isinstance(r, PhonemeRow) for r in u):
        return list(u)
    raise TypeError(f"expected an Utterance or a list of PhonemeRow, got {type(u).__name__}")


def check_utterances(corpus, require_gt: bool = False) -> list[list[PhonemeRow]]:
    if corpus is None or len(corpus) == 0:
        raise ValueError("empty corpus")
    out = []
    for i, u in enumerate(corpus):
        rows = utterance_rows(u)
        if not rows:
            raise ValueError(f"utterance {i} has no rows")
        if require_gt and any(r.gt_dur is None for r in rows):
            raise ValueError(f"utterance {i} lacks ground-truth durations")
        out.append(rows)
    return out


def check_frames(x, dim: int | None = None, name: str = "frames") -> np.ndarray:
    """2-D finite float array, optionally with a fixed column count."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"{name}: expected {dim} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    return arr


def check_same_length(a, b, name: str) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"{name}: lengths differ ({a.shape[0]} vs {b.shape[0]})")
    return a, b


def check_durations(durations: Sequence, n: int) -> np.ndarray:
    d = np.asarray(durations)
    if d.shape != (n,):
        raise ShapeError(f"durations: expected {n} values, got shape {d.shape}")
    if np.any(d < 0) or np.any(d != np.round(d)):
        raise ValueError("durations must be non-negative integers")
    return d.astype(np.int64)
