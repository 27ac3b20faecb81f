import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singsynth import nn
from singsynth.acoustic import (
    AcousticExample, AcousticModel, AcousticModelConfig, dat_loss, decode, encode,
    example_loss, length_regulate, progressive_loss, train_acoustic,
)
from singsynth.exceptions import ConfigError, ShapeError
from singsynth.synth_corpus import generate_corpus


def brute_progressive(projections, target, w):
    T, D = target.shape
    total = 0.0
    for t in range(T):
        per_frame = 0.0
        for p in projections:
            s = 0.0
            for d in range(D):
                s += w[d] * abs(p[t][d] - target[t][d])
            per_frame += s / D
        total += per_frame / len(projections)
    return total / T


@pytest.fixture(scope="module")
def songs():
    return generate_corpus(2, 3, seed=5, phrases=(1, 1), syllables=(2, 3), with_audio=False)


def _examples(songs, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for s in songs:
        n = sum(r.gt_dur for r in s.rows)
        out.append(AcousticExample(s.rows, rng.random((n, 26)), int(s.singer_id), s.utterance_id))
    return out


def _model(**kw):
    kw.setdefault("n_speakers", 2)
    return AcousticModel(**kw).build()


class TestConfig:
    def test_weights(self):
        w = AcousticModelConfig().weights
        assert w.shape == (26,) and w[24] == 1.2 and np.sum(w) == pytest.approx(26.2)

    def test_bad(self):
        with pytest.raises(ConfigError):
            AcousticModelConfig(dim=30, heads=4)
        with pytest.raises(ConfigError):
            AcousticModelConfig(n_speakers=0)


class TestLengthRegulate:
    def test_definition(self):
        x = np.array([[1.0], [2.0], [3.0]])
        assert length_regulate(x, [2, 0, 3]).data[:, 0].tolist() == [1, 1, 3, 3, 3]

    def test_identity(self):
        x = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(length_regulate(x, [1] * 4).data, x)

    def test_all_zero(self):
        with pytest.raises(ValueError):
            length_regulate(np.ones((2, 3)), [0, 0])

    def test_negative(self):
        with pytest.raises(ValueError):
            length_regulate(np.ones((2, 3)), [1, -1])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=12).filter(lambda d: sum(d) > 0))
    def test_length(self, d):
        assert length_regulate(np.ones((len(d), 2)), d).shape == (sum(d), 2)


class TestProgressiveLoss:
    def test_zero(self):
        y = np.random.default_rng(0).random((4, 26))
        assert progressive_loss([y, y, y], y, np.ones(26)).item() == 0.0

    def test_toy(self):
        assert progressive_loss([np.zeros((1, 2))], np.ones((1, 2)), [1.0, 1.2]).item() == pytest.approx(1.1)

    def test_pitch_sensitivity(self):
        w = AcousticModelConfig().weights
        y = np.zeros((3, 26))
        base = progressive_loss([y], y, w).item()
        p0, p24 = y.copy(), y.copy()
        p0[:, 0] = 0.5
        p24[:, 24] = 0.5
        d0 = progressive_loss([p0], y, w).item() - base
        d24 = progressive_loss([p24], y, w).item() - base
        assert d24 == pytest.approx(1.2 * d0, rel=1e-12)

    def test_unit_weights_is_plain_l1(self):
        rng = np.random.default_rng(1)
        y = rng.random((5, 26))
        ps = [rng.random((5, 26)) for _ in range(3)]
        plain = np.mean([np.mean(np.abs(p - y)) for p in ps])
        assert progressive_loss(ps, y, np.ones(26)).item() == pytest.approx(plain, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            progressive_loss([np.zeros((3, 26))], np.zeros((4, 26)), np.ones(26))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
    def test_oracle(self, T, B, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(T, 26))
        ps = [rng.normal(size=(T, 26)) for _ in range(B)]
        w = AcousticModelConfig().weights
        assert progressive_loss(ps, y, w).item() == pytest.approx(brute_progressive(ps, y, w), rel=1e-9)


class TestModel:
    def test_single_row(self, songs):
        m = _model()
        assert encode(m, songs[0].rows[:1]).shape == (1, 32)

    def test_pitch_sensitivity(self, songs):
        m = _model()
        rows = [r for r in songs[0].rows if not r.is_silence][:1]
        other = [type(rows[0])(**{**rows[0].__dict__, "pi": type(rows[0].pi)(rows[0].pi.midi + 1)})]
        assert not np.allclose(encode(m, rows).data, encode(m, other).data)

    def test_decode_count_and_width(self, songs):
        m = _model()
        outs = decode(m, length_regulate(encode(m, songs[0].rows), [r.gt_dur for r in songs[0].rows]))
        assert len(outs) == 3 and all(o.shape[1] == 26 for o in outs)
        assert outs[0].shape[0] == sum(r.gt_dur for r in songs[0].rows)

    def test_bad_speaker(self, songs):
        m = _model()
        with pytest.raises(ValueError):
            dat_loss(m, songs[0].rows, 2)

    def test_dat_uniform_logits(self, songs):
        m = _model()
        for p in m.net_.classifier.parameters():
            p.data[...] = 0.0
        assert dat_loss(m, songs[0].rows, 1).item() == pytest.approx(math.log(2))

    def test_single_speaker_dat(self, songs):
        m = _model(n_speakers=1)
        loss = dat_loss(m, songs[0].rows, 0)
        assert loss.item() == 0.0 and not loss.requires_grad

    def test_reversal_scales_encoder_gradient(self, songs):
        m = _model()
        rows = songs[0].rows
        states = encode(m, rows)
        leaf = nn.Tensor(states.data.copy(), requires_grad=True)
        dat_loss(m, leaf, 1, lam=0.02).backward()
        reversed_grad = leaf.grad.copy()
        leaf.grad = None
        m.net_.zero_grad()
        dat_loss(m, leaf, 1, lam=1.0).backward()
        np.testing.assert_allclose(reversed_grad, 0.02 * leaf.grad, rtol=1e-12)

    def test_unknown_id(self, songs):
        m = _model()
        bad = type(songs[0].rows[0])(**{**songs[0].rows[0].__dict__, "ph": 10_000})
        with pytest.raises(Exception):
            encode(m, [bad])


def _short_examples(model, songs, n_rows=4):
    # targets sit just above every output, so no L1 residual is near its kink
    # while the loss stays small enough for clean central differences
    rng = np.random.default_rng(0)
    out = []
    for s in songs:
        rows = s.rows[1:1 + n_rows]
        durs = [r.gt_dur for r in rows]
        top = max(np.abs(o.data).max() for o in decode(model, length_regulate(encode(model, rows), durs)))
        out.append(AcousticExample(rows, top + 0.5 + rng.random((sum(durs), 26)), int(s.singer_id)))
    return out


class TestGradients:
    @pytest.mark.parametrize("progressive", [True, False])
    def test_reconstruction(self, songs, progressive):
        m = _model(progressive=progressive, dim=8, heads=2, filter_size=8)
        ex = _short_examples(m, songs[:2])

        def loss():
            total = example_loss(m, ex[0], use_dat=False)[0]
            return total + example_loss(m, ex[1], use_dat=False)[0]

        assert nn.grad_check(loss, m.net_.parameters(), max_coords=20) < 1e-4

    def test_adversarial_branch(self, songs):
        # the classifier sees the true gradient, the encoder -lambda times it
        m = _model(dim=8, heads=2, filter_size=8)
        rows = songs[1].rows[:6]

        def loss():
            return dat_loss(m, rows, 1)

        clf = m.net_.classifier.parameters()
        enc = [p for name, p in m.net_.named_parameters()
               if name.split(".")[0] in ("ph", "pt", "pi", "sr", "in_norm", "in_proj", "encoder")]
        assert nn.grad_check(loss, clf) < 1e-4
        assert nn.grad_check(loss, enc, max_coords=40, scale=-0.02) < 1e-4


class TestTraining:
    def test_example_validation(self, songs):
        with pytest.raises(ShapeError):
            AcousticExample(songs[0].rows, np.zeros((3, 26)))

    def test_finetune_needs_checkpoint(self, songs):
        with pytest.raises(ValueError):
            train_acoustic(_model(), _examples(songs), "finetune_single", 1, 1e-3, 0)

    def test_unknown_recipe(self, songs):
        with pytest.raises(ValueError):
            train_acoustic(_model(), _examples(songs), "bogus", 1, 1e-3, 0)

    def test_deterministic_and_saves(self, songs, tmp_path):
        ex = _examples(songs)
        a = AcousticModel(n_speakers=2, epochs=2).fit(ex)
        b = AcousticModel(n_speakers=2, epochs=2).fit(ex)
        assert a.report_.to_json() == b.report_.to_json()
        a.save(tmp_path / "ac.ckpt")
        c = AcousticModel.load(tmp_path / "ac.ckpt")
        # checkpoints hold float32 values
        np.testing.assert_allclose(a.predict(ex[0].rows), c.predict(ex[0].rows), atol=1e-5)
        c.save(tmp_path / "again.ckpt")
        d = AcousticModel.load(tmp_path / "again.ckpt")
        np.testing.assert_array_equal(c.predict(ex[0].rows), d.predict(ex[0].rows))

    def test_finetune_from_checkpoint(self, songs, tmp_path):
        ex = _examples(songs)
        pre = AcousticModel(n_speakers=2, epochs=2).fit(ex)
        pre.save(tmp_path / "pre.ckpt")
        single = [e for e in ex if e.speaker == 0]
        ft = AcousticModel(n_speakers=2, epochs=1)
        ft.fit(single, recipe="finetune_single", init=tmp_path / "pre.ckpt")
        assert ft.report_.config["use_dat"] is False
        assert all(h["dat_loss"] == 0.0 for h in ft.report_.history)

    def test_overfit(self, songs):
        ex = _examples(songs[:2])
        m = AcousticModel(n_speakers=2, epochs=60, lr=3e-3, use_dat=False).fit(ex)
        h = m.report_.history
        assert h[-1]["loss"] < 0.5 * h[0]["loss"]
