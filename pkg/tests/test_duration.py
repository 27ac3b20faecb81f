import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradient_cases import fd_noise_floor
from singsynth import nn
from singsynth.duration import (
    DurationModel, multiscale_loss, postprocess, predict_log_durations, train_duration,
    utterance_loss,
)
from singsynth.sequence import PhonemeRow, syllable_groups
from singsynth.synth_corpus import generate_corpus
from singsynth.vocab import phoneme_id, ptype_id


def brute_force_loss(pred, gt, groups, syllable=True):
    total = 0.0
    for i in range(len(pred)):
        total += (gt[i] - pred[i]) ** 2
    loss = total / len(pred)
    if syllable:
        acc = 0.0
        for g in groups:
            s = 0.0
            for i in g:
                s += gt[i] - pred[i]
            acc += s * s
        loss += acc / len(groups)
    return loss


@st.composite
def loss_instances(draw):
    sizes = draw(st.lists(st.integers(1, 4), min_size=1, max_size=8))
    n = sum(sizes)
    vals = st.floats(0.5, 200.0, allow_nan=False)
    pred = np.array(draw(st.lists(vals, min_size=n, max_size=n)))
    gt = np.array(draw(st.lists(vals, min_size=n, max_size=n)))
    edges = np.cumsum([0] + sizes)
    return pred, gt, [np.arange(a, b) for a, b in zip(edges, edges[1:])]


class TestMultiscaleLoss:
    def test_zero(self):
        assert multiscale_loss([3.0, 4.0], [3.0, 4.0], [[0, 1]]) == 0.0

    def test_sums_match(self):
        assert multiscale_loss([12, 18], [10, 20], [[0, 1]]) == pytest.approx(4.0)

    def test_sums_differ(self):
        assert multiscale_loss([12, 22], [10, 20], [[0, 1]]) == pytest.approx(20.0)

    def test_syllable_id_map(self):
        a = multiscale_loss([1, 2, 3], [2, 2, 2], [0, 0, 1])
        b = multiscale_loss([1, 2, 3], [2, 2, 2], [[0, 1], [2]])
        assert a == b

    def test_empty_group(self):
        with pytest.raises(ValueError, match="empty"):
            multiscale_loss([1.0], [1.0], [[0], []])

    @settings(max_examples=200, deadline=None)
    @given(loss_instances())
    def test_matches_brute_force(self, inst):
        pred, gt, groups = inst
        assert multiscale_loss(pred, gt, groups) == pytest.approx(brute_force_loss(pred, gt, groups), rel=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(loss_instances(), st.integers(0, 2**31))
    def test_redistribution(self, inst, seed):
        pred, gt, groups = inst
        rng = np.random.default_rng(seed)
        moved = pred.copy()
        for g in groups:
            delta = rng.normal(size=g.size)
            moved[g] += delta - delta.mean()
        term1 = multiscale_loss(pred, gt, groups) - multiscale_loss(pred, gt, groups, False)
        term1_moved = multiscale_loss(moved, gt, groups) - multiscale_loss(moved, gt, groups, False)
        assert term1_moved == pytest.approx(term1, rel=1e-7, abs=1e-7)

    @settings(max_examples=200, deadline=None)
    @given(loss_instances())
    def test_ordering(self, inst):
        pred, gt, groups = inst
        full, phone = multiscale_loss(pred, gt, groups), multiscale_loss(pred, gt, groups, False)
        assert full >= phone >= 0


def _row(phoneme, ptype, nominal, syl, bt=None):
    from singsynth.score import NotePitch
    pitch = NotePitch.silence() if ptype == "silence" else NotePitch(60)
    return PhonemeRow(phoneme_id(phoneme), ptype_id(ptype), pitch, "null", bt or nominal, nominal,
                      syllable_index=syl)


class TestPostprocess:
    def test_worked_example(self):
        rows = [_row("zh", "initial", 50, 0, 100), _row("ang", "final", 50, 0, 100)]
        assert list(postprocess([30.0, 90.0], rows)) == [10, 90]

    def test_fixed_point(self):
        rows = [_row("m", "initial", 20, 0, 40), _row("a", "final", 20, 0, 40)]
        assert list(postprocess([8.0, 32.0], rows)) == [8, 32]

    def test_single_final(self):
        assert list(postprocess([55.0], [_row("a", "single_final", 40, 0)])) == [40]

    def test_silence_passthrough(self):
        rows = [_row("sil", "silence", 30, 0), _row("a", "single_final", 40, 1)]
        assert list(postprocess([12.4, 10.0], rows)) == [12, 40]

    def test_zero_sum(self):
        with pytest.raises(ValueError, match="sum to 0"):
            postprocess([0.0, 0.0], [_row("m", "initial", 20, 0), _row("a", "final", 20, 0)])

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 400), st.lists(st.floats(0.01, 300.0), min_size=2, max_size=4),
           st.booleans())
    def test_invariants(self, total, pred, has_initial):
        n = len(pred)
        rows = []
        for i in range(n):
            kind = "initial" if (i == 0 and has_initial) else "final"
            rows.append(_row("m" if kind == "initial" else "a", kind, total // n + (i < total % n), 0))
        out = postprocess(pred, rows)
        assert out.sum() == total
        if has_initial:
            assert out[0] <= 10
        if total >= n:
            assert out.min() >= 1


@pytest.fixture(scope="module")
def small_corpus():
    return [s.rows for s in generate_corpus(2, 10, seed=5, phrases=(1, 2), with_audio=False)]


class TestModel:
    def test_output_length(self, small_corpus):
        m = DurationModel(hidden=8, layers=1).build()
        assert predict_log_durations(m, small_corpus[0]).shape == (len(small_corpus[0]),)

    def test_batch_permutation(self, small_corpus):
        m = DurationModel(hidden=8, layers=1).build()
        a, b = m.predict(small_corpus[:2])
        b2, a2 = m.predict(small_corpus[1::-1])
        assert np.array_equal(a, a2) and np.array_equal(b, b2)

    def test_zeroed_projection(self, small_corpus):
        m = DurationModel(hidden=8, layers=1).build()
        m.net_.proj.weight.data[:] = 0.0
        m.net_.proj.bias.data[:] = 1.7
        assert np.allclose(predict_log_durations(m, small_corpus[0]), 1.7)

    def test_unknown_id(self, small_corpus):
        from dataclasses import replace
        m = DurationModel(hidden=8, layers=1).build()
        rows = [replace(small_corpus[0][0], ph=10_000)] + small_corpus[0][1:]
        with pytest.raises(ValueError):
            predict_log_durations(m, rows)

    @pytest.mark.parametrize("flag", [True, False])
    def test_loss_gradient(self, small_corpus, flag):
        m = DurationModel(ph_dim=3, pt_dim=2, pi_dim=3, sr_dim=2, bt_dim=2, hidden=3).build()
        rows = small_corpus[0][:7]
        # start from the training initialization so the loss is well conditioned
        m.net_.proj.bias.data[:] = np.mean(np.log([r.gt_dur for r in rows]))
        f = lambda: utterance_loss(m.net_, rows, flag)  # noqa: E731
        assert nn.grad_check(f, m.net_.parameters(), max_coords=60, floor=fd_noise_floor(f().item()),
                             rng=np.random.default_rng(0)) < 1e-4

    def test_descent(self, small_corpus):
        m = DurationModel(hidden=16, layers=1, holdout=0.0)
        rep = train_duration(m, small_corpus, 2, 3e-3, 0)
        assert rep.history[1]["loss"] < rep.history[0]["loss"]

    def test_zero_lr(self, small_corpus):
        m = DurationModel(hidden=8, layers=1)
        rep = train_duration(m, small_corpus, 3, 0.0, 0)
        before = DurationModel(hidden=8, layers=1, seed=0).build().net_.state_dict()
        after = m.net_.state_dict()
        # only the output bias is set from the data before training starts
        assert all(np.array_equal(before[k], after[k]) for k in before if k != "proj.bias")
        assert len({h["loss"] for h in rep.history}) == 1

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty"):
            train_duration(DurationModel(), [], 1, 1e-3, 0)

    def test_deterministic_and_roundtrip(self, small_corpus, tmp_path):
        a = DurationModel(hidden=8, layers=1, epochs=1).fit(small_corpus)
        b = DurationModel(hidden=8, layers=1, epochs=1).fit(small_corpus)
        assert a.report_.to_json() == b.report_.to_json()
        a.save(tmp_path / "d.ckpt")
        c = DurationModel.load(tmp_path / "d.ckpt")
        assert c.get_params() == a.get_params()
        np.testing.assert_allclose(c.predict(small_corpus[0]), a.predict(small_corpus[0]), rtol=1e-5)

    def test_postprocessed_prediction(self, small_corpus):
        m = DurationModel(hidden=8, layers=1).build()
        rows = small_corpus[0]
        out = m.predict(rows, postprocess_output=True)
        for g in syllable_groups(rows):
            if not rows[g[0]].is_silence:
                assert out[g].sum() == sum(rows[i].nominal_dur for i in g)
