"""Objective comparison metrics for durations, pitch tracks and cepstra.

Undefined values (empty voicing overlap, zero variance) are returned as
``None`` and serialized as JSON ``null``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ShapeError

CEPSTRAL_DB = 10.0 * math.sqrt(2.0) / math.log(10.0)
DEFAULT_DUR_TOLERANCE = 5


def _track(x):
    """Accept (f0, voiced) pairs as a tuple of arrays or a (T, 2) array."""
    if isinstance(x, tuple) and len(x) == 2:
        f0, voiced = x
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ShapeError(f"pitch track: expected (f0, voiced) pairs, got shape {arr.shape}")
        f0, voiced = arr[:, 0], arr[:, 1]
    f0 = np.asarray(f0, dtype=np.float64).ravel()
    voiced = np.asarray(voiced).astype(bool).ravel()
    if f0.shape != voiced.shape:
        raise ShapeError("pitch track: f0 and voicing lengths differ")
    return f0, voiced


def _pair(pred, ref, name):
    pf, pv = _track(pred)
    rf, rv = _track(ref)
    if pf.size != rf.size:
        raise ShapeError(f"{name}: frame counts differ ({pf.size} vs {rf.size})")
    return pf, pv, rf, rv


def _pearson(a, b) -> Optional[float]:
    if a.size < 2:
        return None
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den == 0.0:
        return None
    return float(np.clip((da @ db) / den, -1.0, 1.0))


def f0_rmse(pred, ref) -> Optional[float]:
    """RMSE in Hz over frames voiced in both tracks."""
    pf, pv, rf, rv = _pair(pred, ref, "f0_rmse")
    both = pv & rv
    if not both.any():
        return None
    d = pf[both] - rf[both]
    return float(np.sqrt(np.mean(d * d)))


def f0_corr(pred, ref) -> Optional[float]:
    pf, pv, rf, rv = _pair(pred, ref, "f0_corr")
    both = pv & rv
    return _pearson(pf[both], rf[both])


def vuv_error(pred, ref) -> float:
    _, pv, _, rv = _pair(pred, ref, "vuv_error")
    if pv.size == 0:
        raise ValueError("vuv_error: empty tracks")
    return float(np.mean(pv != rv))


def bfccd(pred, ref) -> float:
    """Mean cepstral distortion over frames, coefficient 0 excluded."""
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.ndim != 2 or p.shape != r.shape or p.shape[1] < 2:
        raise ShapeError(f"bfccd: shapes {p.shape} and {r.shape}")
    if p.shape[0] == 0:
        raise ValueError("bfccd: no frames")
    d = p[:, 1:24] - r[:, 1:24]
    return float(CEPSTRAL_DB * np.mean(np.sqrt(np.sum(d * d, axis=1))))


def _durs(pred, ref, name):
    p = np.asarray(pred, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if p.shape != r.shape:
        raise ShapeError(f"{name}: lengths differ ({p.size} vs {r.size})")
    if p.size == 0:
        raise ValueError(f"{name}: no durations")
    return p, r


def dur_acc(pred, ref, tolerance: float = DEFAULT_DUR_TOLERANCE) -> float:
    p, r = _durs(pred, ref, "dur_acc")
    return float(np.mean(np.abs(p - r) <= tolerance))


def dur_corr(pred, ref) -> Optional[float]:
    p, r = _durs(pred, ref, "dur_corr")
    return _pearson(p, r)


@dataclass
class MetricsReport:
    f0_rmse: Optional[float] = None
    f0_corr: Optional[float] = None
    vuv_error: Optional[float] = None
    bfccd: Optional[float] = None
    dur_acc: Optional[float] = None
    dur_corr: Optional[float] = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        checks = {"f0_rmse": (0, math.inf), "f0_corr": (-1, 1), "vuv_error": (0, 1),
                  "bfccd": (0, math.inf), "dur_acc": (0, 1), "dur_corr": (-1, 1)}
        for name, (lo, hi) in checks.items():
            v = getattr(self, name)
            if v is not None and not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def pitch_track_from_features(frames, voicing_threshold: float = 0.3):
    """(f0 Hz, voiced) from denormalized 26-dim frames via exp(log-F0) and the correlation column."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.exp(frames[:, 24]), frames[:, 25] >= voicing_threshold


def evaluate_features(pred, ref, voicing_threshold: float = 0.3) -> MetricsReport:
    """Pitch and cepstral metrics between two denormalized feature tracks."""
    p, r = np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    n = min(len(p), len(r))
    p, r = p[:n], r[:n]
    tp, tr = pitch_track_from_features(p, voicing_threshold), pitch_track_from_features(r, voicing_threshold)
    return MetricsReport(f0_rmse=f0_rmse(tp, tr), f0_corr=f0_corr(tp, tr), vuv_error=vuv_error(tp, tr),
                         bfccd=bfccd(p[:, :24], r[:, :24]),
                         config={"voicing_threshold": voicing_threshold, "frames": n})


def evaluate_durations(pred, ref, tolerance: float = DEFAULT_DUR_TOLERANCE) -> MetricsReport:
    return MetricsReport(dur_acc=dur_acc(pred, ref, tolerance), dur_corr=dur_corr(pred, ref),
                         config={"dur_tolerance": tolerance})
