"""Pitch-aware acoustic features at 24 kHz.

Each 10 ms frame carries 24 Bark-scale cepstral coefficients, the natural log
of F0 and a pitch correlation, in that order. The module also turns cepstra
back into linear-prediction coefficients and provides min-max scaling.
"""

from __future__ import annotations

import logging
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, idct
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import FormatError, ShapeError

logger = logging.getLogger(__name__)

FEAT_MAGIC = b"WSFEAT1"
N_BFCC = 24
LOG_F0_DIM = 24
PITCH_CORR_DIM = 25
FEATURE_DIM = 26


@dataclass(frozen=True)
class DSPConfig:
    sample_rate: int = 24000
    hop: int = 240
    window: int = 480
    n_fft: int = 512
    n_bands: int = N_BFCC
    max_hz: float = 12000.0
    log_floor: float = 1e-10
    lpc_order: int = 16
    lag_window_hz: float = 60.0
    noise_floor: float = 1e-5
    pitch_window: int = 720
    min_lag: int = 60
    max_lag: int = 600
    voicing_threshold: float = 0.3
    unvoiced_f0_hz: float = 100.0
    subharmonic_ratio: float = 0.95
    # width of the sample-rate GRU in the downstream vocoder; documentation only
    vocoder_gru_a_units: int = 512


DEFAULT_DSP = DSPConfig()


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 24000

    def __post_init__(self):
        if self.sample_rate != 24000:
            raise FormatError(f"sample rate must be 24000 Hz, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError("waveform must be mono (1-D)")


def _samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    x = np.asarray(w, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("waveform must be mono (1-D)")
    return x


def frame_count(n_samples: int, cfg: DSPConfig = DEFAULT_DSP) -> int:
    if n_samples < cfg.window:
        return 0
    return (n_samples - cfg.window) // cfg.hop + 1


def hz_to_bark(hz):
    """Traunmüller's Bark approximation (closed-form inverse below)."""
    hz = np.asarray(hz, dtype=np.float64)
    return 26.81 * hz / (1960.0 + hz) - 0.53


def bark_to_hz(z):
    z = np.asarray(z, dtype=np.float64)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def band_centers_hz(cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    z = np.linspace(hz_to_bark(0.0), hz_to_bark(cfg.max_hz), cfg.n_bands)
    centers = bark_to_hz(z)
    centers[0], centers[-1] = 0.0, cfg.max_hz
    return centers


def bark_filterbank(cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    """(n_bands, n_fft//2 + 1) triangular weights, each row normalized to unit sum.

    Rows average rather than sum the power they cover, so a flat power
    spectrum gives equal band energies.
    """
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    centers = band_centers_hz(cfg)
    fb = np.zeros((cfg.n_bands, freqs.size))
    for b in range(cfg.n_bands):
        one_hot = np.zeros(cfg.n_bands)
        one_hot[b] = 1.0
        fb[b] = np.interp(freqs, centers, one_hot)
    return fb / fb.sum(axis=1, keepdims=True)


def _frames(x: np.ndarray, cfg: DSPConfig) -> np.ndarray:
    if x.size < cfg.window:
        raise ShapeError(f"need at least {cfg.window} samples, got {x.size}")
    return sliding_window_view(x, cfg.window)[:: cfg.hop]


def band_energies(w, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    x = _samples(w)
    frames = _frames(x, cfg) * get_window("hann", cfg.window, fftbins=True)
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=-1)) ** 2
    return power @ bark_filterbank(cfg).T


def analyze_bfcc(w, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    """Per-frame Bark cepstrum, shape (frames, 24)."""
    energies = band_energies(w, cfg)
    return dct(np.log(np.maximum(energies, cfg.log_floor)), type=2, norm="ortho", axis=-1)


def normalized_autocorrelation(x: np.ndarray, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    """NCCF per frame for lags ``min_lag..max_lag``, shape (frames, n_lags).

    Frame t analyses ``pitch_window`` samples centred on the middle of its
    spectral window; the signal is zero-padded at both ends.
    """
    n = frame_count(x.size, cfg)
    half = cfg.pitch_window // 2
    pad_right = half + cfg.max_lag + cfg.pitch_window
    xp = np.concatenate([np.zeros(half), x, np.zeros(pad_right)])
    sq = np.concatenate([[0.0], np.cumsum(xp * xp)])
    lags = np.arange(cfg.min_lag, cfg.max_lag + 1)
    out = np.zeros((n, lags.size))
    W = cfg.pitch_window
    for t in range(n):
        start = t * cfg.hop + cfg.window // 2  # centre in original coords == start in padded
        a = xp[start:start + W]
        seg = xp[start + cfg.min_lag:start + cfg.max_lag + W]
        dots = sliding_window_view(seg, W) @ a
        ea = sq[start + W] - sq[start]
        eb = sq[start + lags + W] - sq[start + lags]
        denom = np.sqrt(np.maximum(ea * eb, 0.0))
        ok = denom > 1e-12
        out[t, ok] = dots[ok] / denom[ok]
    return out


def _pick_lag(row: np.ndarray, ratio: float) -> int:
    best = int(np.argmax(row))
    peak = row[best]
    if peak <= 0:
        return best
    # prefer the shortest local maximum close to the global one (subharmonic guard)
    inner = row[1:-1]
    is_peak = (inner >= row[:-2]) & (inner >= row[2:]) & (inner >= ratio * peak)
    cands = np.flatnonzero(is_peak) + 1
    return int(cands[0]) if cands.size and cands[0] < best else best


def estimate_pitch(w, cfg: DSPConfig = DEFAULT_DSP):
    """Per-frame ``(log_f0, pitch_corr, voiced)``.

    Unvoiced frames get log-F0 linearly interpolated between voiced
    neighbours (held constant past the ends); with no voiced frame at all
    they get ``log(unvoiced_f0_hz)``.
    """
    x = _samples(w)
    if x.size < cfg.window:
        raise ShapeError(f"need at least {cfg.window} samples, got {x.size}")
    nccf = normalized_autocorrelation(x, cfg)
    n = nccf.shape[0]
    corr = np.clip(nccf.max(axis=1), 0.0, 1.0)
    period = np.zeros(n)
    for t in range(n):
        i = _pick_lag(nccf[t], cfg.subharmonic_ratio)
        shift = 0.0
        if 0 < i < nccf.shape[1] - 1:
            y0, y1, y2 = nccf[t, i - 1:i + 2]
            curv = y0 - 2 * y1 + y2
            if curv < 0:
                shift = float(np.clip(0.5 * (y0 - y2) / curv, -0.5, 0.5))
        period[t] = cfg.min_lag + i + shift
    voiced = corr >= cfg.voicing_threshold
    log_f0 = np.full(n, np.log(cfg.unvoiced_f0_hz))
    if voiced.any():
        vi = np.flatnonzero(voiced)
        vals = np.log(cfg.sample_rate / period[vi])
        log_f0 = np.interp(np.arange(n), vi, vals)
    return log_f0, corr, voiced


def features(w, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    """(frames, 26): 24 BFCC, log-F0, pitch correlation."""
    bfcc = analyze_bfcc(w, cfg)
    log_f0, corr, _ = estimate_pitch(w, cfg)
    return np.column_stack([bfcc, log_f0, corr])


def levinson_durbin(r: np.ndarray, order: int):
    """Solve the normal equations for ``A(z) = 1 + sum_i a[i-1] z^-i``.

    Returns ``(a, reflection, error)`` where ``a`` excludes the leading 1.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.size < order + 1:
        raise ShapeError(f"need {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= 0:
        raise ValueError("r[0] must be positive")
    a = np.zeros(order + 1)
    a[0] = 1.0
    k = np.zeros(order)
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        ki = -acc / err
        a[1:i] = a[1:i] + ki * a[i - 1:0:-1]
        a[i] = ki
        k[i - 1] = ki
        err *= 1.0 - ki * ki
    return a[1:], k, err


def lag_window(order: int, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    lags = np.arange(order + 1)
    return np.exp(-0.5 * (2 * np.pi * cfg.lag_window_hz * lags / cfg.sample_rate) ** 2)


def bfcc_autocorrelation(bfcc, cfg: DSPConfig = DEFAULT_DSP) -> np.ndarray:
    """Windowed autocorrelation (lags 0..order) implied by one cepstral frame."""
    bfcc = np.asarray(bfcc, dtype=np.float64)
    if bfcc.shape != (cfg.n_bands,):
        raise ShapeError(f"expected {cfg.n_bands} coefficients, got shape {bfcc.shape}")
    if not np.all(np.isfinite(bfcc)):
        raise ValueError("non-finite cepstral coefficients")
    energies = np.exp(idct(bfcc, type=2, norm="ortho"))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    power = np.interp(freqs, band_centers_hz(cfg), energies)
    r = np.fft.irfft(power, n=cfg.n_fft)[: cfg.lpc_order + 1]
    r = r * lag_window(cfg.lpc_order, cfg)
    r[0] *= 1.0 + cfg.noise_floor
    return r


def bfcc_to_lpc(bfcc, cfg: DSPConfig = DEFAULT_DSP, return_reflection: bool = False):
    """Order-16 prediction coefficients from one 24-dim Bark cepstrum frame."""
    a, k, _ = levinson_durbin(bfcc_autocorrelation(bfcc, cfg), cfg.lpc_order)
    return (a, k) if return_reflection else a


def lpc_envelope(a, n_fft: int = 512) -> np.ndarray:
    """Power response ``1/|A(e^jw)|^2`` on ``n_fft//2 + 1`` bins."""
    return 1.0 / np.abs(np.fft.rfft(np.concatenate([[1.0], a]), n=n_fft)) ** 2


# --- min-max scaling -----------------------------------------------------

@dataclass
class NormStats:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if self.min.shape != self.max.shape or self.min.ndim != 1:
            raise ShapeError("min and max must be 1-D of equal length")
        if np.any(self.max < self.min):
            raise ValueError("max must be >= min in every dimension")

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(np.array(d["min"]), np.array(d["max"]))


def minmax_fit(frames) -> NormStats:
    if isinstance(frames, (list, tuple)):
        frames = np.concatenate([np.atleast_2d(f) for f in frames])
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[0] < 1:
        raise ShapeError("minmax_fit needs at least one frame")
    return NormStats(x.min(axis=0), x.max(axis=0))


def _check_dims(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.min.size:
        raise ShapeError(f"frames have {x.shape[-1]} dims, stats have {stats.min.size}")
    return x


def normalize(frames, stats: NormStats) -> np.ndarray:
    """Map to [0, 1] per dim; constant dims map to 0."""
    x = _check_dims(frames, stats)
    rng = stats.max - stats.min
    safe = np.where(rng > 0, rng, 1.0)
    return np.where(rng > 0, (x - stats.min) / safe, 0.0)


def denormalize(frames, stats: NormStats) -> np.ndarray:
    x = _check_dims(frames, stats)
    return x * (stats.max - stats.min) + stats.min


class MinMaxFeatureScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper over :func:`minmax_fit` / :func:`normalize`."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.stats_ = minmax_fit(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        return normalize(check_array(X, dtype=np.float64), self.stats_)

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        return denormalize(check_array(X, dtype=np.float64), self.stats_)


class AcousticFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer: waveforms -> list of (frames, 26) arrays."""

    def __init__(self, config: DSPConfig = DEFAULT_DSP):
        self.config = config

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [features(w, self.config) for w in X]


# --- file formats ---------------------------------------------------------

def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono audio")
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM")
        rate = wf.getframerate()
        if rate != 24000:
            raise FormatError(f"{path}: sample rate {rate} Hz, expected 24000 (resample first)")
        data = wf.readframes(wf.getnframes())
    return Waveform(np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0)


def write_wav(path, w) -> None:
    x = np.clip(_samples(w), -1.0, 1.0 - 1.0 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(24000)
        wf.writeframes(pcm.tobytes())


def write_features(path, frames) -> None:
    x = np.asarray(frames, dtype="<f4")
    if x.ndim != 2:
        raise ShapeError("feature array must be 2-D")
    Path(path).write_bytes(FEAT_MAGIC + struct.pack("<II", x.shape[0], x.shape[1]) + x.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:7] != FEAT_MAGIC:
        raise FormatError(f"{path}: not a feature file (bad magic)")
    n, dim = struct.unpack_from("<II", data, 7)
    body = data[15:]
    if len(body) != 4 * n * dim:
        raise FormatError(f"{path}: expected {n}x{dim} floats, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
