import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from singsynth import dsp
from singsynth.dsp import (
    DEFAULT_DSP, NormStats, Waveform, analyze_bfcc, band_centers_hz, bark_filterbank,
    bfcc_to_lpc, denormalize, estimate_pitch, features, frame_count, levinson_durbin,
    lpc_envelope, minmax_fit, normalize,
)
from singsynth.exceptions import FormatError, ShapeError

SR = 24000


def sawtooth(f0, seconds=1.0, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return amp * (2 * ((f0 * t) % 1.0) - 1)


def ar2(freq, radius=0.9, n=SR * 2, seed=0):
    th = 2 * np.pi * freq / SR
    e = np.random.default_rng(seed).standard_normal(n)
    return lfilter([1.0], [1.0, -2 * radius * np.cos(th), radius ** 2], e)


def nearest_band(hz):
    return int(np.argmin(np.abs(band_centers_hz() - hz)))


class TestBFCC:
    def test_silence_constant_at_floor(self):
        b = analyze_bfcc(np.zeros(4800))
        assert np.allclose(b, b[0])
        expected = np.zeros(24)
        expected[0] = np.log(1e-10) * np.sqrt(24)
        assert np.allclose(b[0], expected)

    def test_tone_band_matches_direct_dft(self):
        x = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(SR // 2) / SR)
        frame = x[2400:2880] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(480) / 480))
        # direct DFT, independent of np.fft
        k = np.arange(257)[:, None]
        n = np.arange(480)[None, :]
        spec = (frame[None, :] * np.exp(-2j * np.pi * k * n / 512)).sum(axis=1)
        oracle_band = int(np.argmax(bark_filterbank() @ np.abs(spec) ** 2))
        energies = dsp.band_energies(x)
        assert oracle_band == nearest_band(1000)
        assert all(int(np.argmax(e)) == oracle_band for e in energies)
        b = analyze_bfcc(x)
        assert np.allclose(b[1:-1], b[1], atol=1e-6)

    def test_concatenation(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(240 * 20), rng.standard_normal(240 * 15 + 100)
        whole = analyze_bfcc(np.concatenate([a, b]))
        fa, fb = analyze_bfcc(a), analyze_bfcc(b)
        junction = len(fa)  # the one frame that straddles both
        assert np.allclose(whole[:len(fa)], fa)
        assert np.allclose(whole[junction + 1:junction + 1 + len(fb)], fb)
        assert len(whole) == len(fa) + 1 + len(fb)

    def test_short_input(self):
        with pytest.raises(ShapeError):
            analyze_bfcc(np.zeros(100))

    def test_amplitude_scaling(self):
        x = sawtooth(180, 0.5) + 0.01 * np.random.default_rng(2).standard_normal(SR // 2)
        f1, f2 = features(x), features(3.7 * x)
        assert np.allclose(f2[:, 1:], f1[:, 1:], atol=1e-6)
        shift = f2[:, 0] - f1[:, 0]
        assert np.allclose(shift, 2 * np.log(3.7) * np.sqrt(24))


class TestPitch:
    def test_sawtooth_220(self):
        log_f0, corr, voiced = estimate_pitch(sawtooth(220))
        assert abs(np.median(np.exp(log_f0)) - 220) <= 3
        assert corr[3:-3].min() > 0.9

    def test_white_noise(self):
        x = 0.3 * np.random.default_rng(0).standard_normal(SR)
        _, _, voiced = estimate_pitch(x)
        assert voiced.mean() < 0.1

    def test_silence_fallback(self):
        log_f0, corr, voiced = estimate_pitch(np.zeros(SR // 2))
        assert not voiced.any()
        assert np.all(log_f0 == np.log(100)) and np.all(corr == 0)

    def test_unvoiced_interpolation(self):
        x = np.concatenate([sawtooth(200, 0.3), np.zeros(SR // 5), sawtooth(300, 0.3)])
        log_f0, _, voiced = estimate_pitch(x)
        gap = np.flatnonzero(~voiced)
        assert gap.size > 0
        inner = log_f0[gap[0]:gap[-1] + 1]
        assert np.all(np.diff(inner) >= -1e-12)  # rising from 200 Hz to 300 Hz
        assert np.log(195) < inner.min() and inner.max() < np.log(305)

    @pytest.mark.parametrize("f0", [110.0, 165.0, 261.63, 392.0])
    def test_other_fundamentals(self, f0):
        log_f0, _, _ = estimate_pitch(sawtooth(f0, 0.5))
        assert abs(np.median(np.exp(log_f0)) - f0) < 0.02 * f0


class TestFeatures:
    @given(st.integers(480, 6000))
    @settings(max_examples=25, deadline=None)
    def test_frame_count(self, n):
        x = np.random.default_rng(n).standard_normal(n) * 0.1
        assert features(x).shape == ((n - 480) // 240 + 1, 26) == (frame_count(n), 26)

    def test_silence(self):
        f = features(np.zeros(2400))
        assert np.allclose(f[:, :24], f[0, :24])
        assert np.all(f[:, 24] == np.log(100)) and np.all(f[:, 25] == 0)

    def test_composition(self):
        x = sawtooth(220)
        log_f0, corr, _ = estimate_pitch(x)
        f = features(x)
        assert np.array_equal(f[:, 24], log_f0) and np.array_equal(f[:, 25], corr)

    def test_waveform_rate(self):
        with pytest.raises(FormatError):
            Waveform(np.zeros(10), 16000)


class TestLPC:
    def test_levinson_matches_linear_solve(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(4000)
        r = np.array([x[: x.size - k] @ x[k:] for k in range(9)])
        a, k, err = levinson_durbin(r, 8)
        toeplitz = np.array([[r[abs(i - j)] for j in range(8)] for i in range(8)])
        assert np.allclose(a, np.linalg.solve(toeplitz, -r[1:9]))
        assert np.all(np.abs(k) < 1)

    def test_flat_spectrum(self):
        a = bfcc_to_lpc(np.r_[3.0, np.zeros(23)])
        assert np.abs(a).max() < 1e-3

    @pytest.mark.parametrize("freq", [600.0, 1500.0, 3000.0, 6000.0])
    def test_ar2_envelope_peak(self, freq):
        b = analyze_bfcc(ar2(freq)).mean(axis=0)
        env = lpc_envelope(bfcc_to_lpc(b))
        peak_hz = np.argmax(env) * SR / 512
        assert abs(nearest_band(peak_hz) - nearest_band(freq)) <= 1

    @given(st.lists(st.floats(-8, 8), min_size=24, max_size=24))
    @settings(max_examples=200, deadline=None)
    def test_always_stable(self, coeffs):
        a, k = bfcc_to_lpc(np.array(coeffs), return_reflection=True)
        assert np.all(np.abs(k) < 1)
        assert np.all(np.abs(np.roots(np.r_[1.0, a])) < 1)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            bfcc_to_lpc(np.r_[np.nan, np.zeros(23)])


class TestMinMax:
    def test_identity_on_unit_range(self):
        x = np.vstack([np.zeros(26), np.ones(26), np.full(26, 0.3)])
        assert np.allclose(normalize(x, minmax_fit(x)), x)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(20, 26)) * rng.uniform(0.1, 50, 26) + rng.uniform(-100, 100, 26)
        stats = minmax_fit(x)
        back = denormalize(normalize(x, stats), stats)
        assert np.all(np.abs(back - x) <= 1e-6 * np.maximum(np.abs(x), 1e-12))

    def test_constant_dim(self):
        x = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
        stats = minmax_fit(x)
        n = normalize(x, stats)
        assert np.all(n[:, 1] == 0)
        assert np.all(denormalize(n, stats)[:, 1] == 7.0)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            normalize(np.zeros((2, 3)), NormStats(np.zeros(2), np.ones(2)))

    def test_estimator(self):
        x = np.random.default_rng(0).normal(size=(10, 26))
        scaler = dsp.MinMaxFeatureScaler().fit(x)
        assert np.allclose(scaler.inverse_transform(scaler.transform(x)), x)


def test_file_formats(tmp_path):
    x = sawtooth(220, 0.2)
    dsp.write_wav(tmp_path / "a.wav", x)
    w = dsp.read_wav(tmp_path / "a.wav")
    assert np.abs(w.samples - x).max() < 1e-4
    f = features(w)
    dsp.write_features(tmp_path / "a.feat", f)
    assert (tmp_path / "a.feat").read_bytes()[:7] == b"WSFEAT1"
    assert np.allclose(dsp.read_features(tmp_path / "a.feat"), f.astype(np.float32))
    (tmp_path / "bad.feat").write_bytes(b"XXXX")
    with pytest.raises(FormatError):
        dsp.read_features(tmp_path / "bad.feat")
