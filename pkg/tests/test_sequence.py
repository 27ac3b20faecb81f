from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from singsynth.exceptions import AlignmentError, IntervalError
from singsynth.score import Note, NotePitch, Score, SyllableEvent, beats_to_frames
from singsynth.sequence import (
    IntervalEntry, attach_ground_truth, build_rows, parse_intervals, read_rows, rows_from_tsv,
    rows_to_tsv, syllable_groups, write_rows,
)


def _score(*events, bpm=120):
    return Score(bpm, list(events))


def _ev(pinyin, *notes):
    return SyllableEvent(pinyin, [Note(NotePitch(m), Fraction(b), s) for m, b, s in notes])


def _rest(beats):
    return SyllableEvent("", [Note(NotePitch.silence(), Fraction(beats))])


class TestParseIntervals:
    def test_minimal(self):
        entries = parse_intervals("0.00\t0.10\tzh\n0.10\t0.52\tang")
        assert [(float(e.start), float(e.end), e.label) for e in entries] == [
            (0.0, 0.1, "zh"), (0.1, 0.52, "ang")]

    def test_gap_becomes_silence(self):
        entries = parse_intervals("0.00\t0.10\tzh\n0.30\t0.52\tang")
        assert [e.label for e in entries] == ["zh", "sil", "ang"]
        assert entries[1].start == Fraction(1, 10) and entries[1].end == Fraction(3, 10)

    def test_leading_gap_and_silence_merge(self):
        entries = parse_intervals("0.05\t0.10\tsil\n0.10\t0.20\ta")
        assert [(e.start, e.label) for e in entries] == [(0, "sil"), (Fraction(1, 10), "a")]

    def test_negative_duration(self):
        with pytest.raises(IntervalError, match="negative duration at line 1"):
            parse_intervals("0.5\t0.4\ta")

    def test_overlap(self):
        with pytest.raises(IntervalError, match="overlap at line 2"):
            parse_intervals("0.0\t0.4\ta\n0.3\t0.5\tb")


class TestBuildRows:
    def test_even_split(self):
        rows = build_rows(_score(_ev("zhang", (60, 1, "null"))))
        assert [(r.phoneme, r.nominal_dur, r.bt, r.pi.midi) for r in rows] == [
            ("zh", 25, 50, 60), ("ang", 25, 50, 60)]

    def test_single_final(self):
        rows = build_rows(_score(_ev("a", (60, Fraction(4, 5), "null"))))
        assert [(r.phoneme, r.ptype, r.nominal_dur) for r in rows] == [("a", "single_final", 40)]

    def test_melisma(self):
        # 30 and 20 frames at 120 bpm
        rows = build_rows(_score(_ev("ma", (60, Fraction(3, 5), "start"), (62, Fraction(2, 5), "stop"))))
        assert [(r.phoneme, r.nominal_dur, r.pi.midi, r.sr) for r in rows] == [
            ("m", 15, 60, "start"), ("a", 15, 60, "start"), ("a", 20, 62, "stop")]
        assert {r.syllable_index for r in rows} == {0}

    def test_odd_split_rounds_half_up(self):
        rows = build_rows(_score(_ev("ma", (60, Fraction(1, 2), "null"))))
        assert [r.nominal_dur for r in rows] == [13, 12]

    def test_silence_row(self):
        rows = build_rows(_score(_rest(1), _ev("a", (60, 1, "null"))))
        assert rows[0].phoneme == "sil" and rows[0].pi.rest and rows[0].nominal_dur == 50
        assert [r.syllable_index for r in rows] == [0, 1]

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.sampled_from(["ma", "a", "zhang", "", "chuan", "yi"]),
                              st.lists(st.tuples(st.integers(40, 80),
                                                 st.fractions(Fraction(1, 4), 3, max_denominator=4)),
                                       min_size=1, max_size=3)),
                    min_size=1, max_size=8),
           st.integers(60, 160))
    def test_syllable_sum_and_count(self, spec, bpm):
        events = []
        for pinyin, notes in spec:
            if pinyin == "":
                events.append(_rest(notes[0][1]))
            else:
                events.append(_ev(pinyin, *[(m, b, "null") for m, b in notes]))
        score = Score(bpm, events)
        rows = build_rows(score)
        groups = syllable_groups(rows)
        assert len(groups) == len(events)
        expected_rows = 0
        for ev, g in zip(events, groups):
            bts = [beats_to_frames(n.beats, bpm) for n in ev.notes]
            assert sum(rows[i].nominal_dur for i in g) == sum(bts)
            n_ph = 1 if ev.is_rest or ev.pinyin in ("a", "yi") else 2
            expected_rows += 1 if ev.is_rest else n_ph + len(ev.notes) - 1
        assert len(rows) == expected_rows
        assert build_rows(score) == rows


class TestAttachGroundTruth:
    def test_quantized(self):
        rows = build_rows(_score(_ev("zhang", (60, 1, "null"))))
        out = attach_ground_truth(rows, parse_intervals("0.00\t0.10\tzh\n0.10\t0.52\tang"))
        assert [r.gt_dur for r in out] == [10, 42]
        assert [r.nominal_dur for r in out] == [r.nominal_dur for r in rows]

    def test_silence_padded(self):
        rows = build_rows(_score(_rest(1), _ev("zhang", (60, 1, "null")), _rest(1)))
        text = "0.0\t0.48\tsil\n0.48\t0.55\tzh\n0.55\t1.0\tang\n1.0\t1.5\tsil\n"
        out = attach_ground_truth(rows, parse_intervals(text))
        assert [r.gt_dur for r in out] == [48, 7, 45, 50]

    def test_short_silence_absorbed(self):
        rows = build_rows(_score(_ev("zhang", (60, 1, "null"))))
        out = attach_ground_truth(rows, parse_intervals("0.0\t0.1\tzh\n0.12\t0.5\tang"))
        assert [r.gt_dur for r in out] == [12, 38]

    def test_mismatch(self):
        rows = build_rows(_score(_ev("zhang", (60, 1, "null"))))
        with pytest.raises(AlignmentError, match="index 1"):
            attach_ground_truth(rows, parse_intervals("0.0\t0.1\tzh\n0.1\t0.5\teng"))

    def test_count_mismatch(self):
        rows = build_rows(_score(_ev("zhang", (60, 1, "null"))))
        with pytest.raises(AlignmentError, match="count"):
            attach_ground_truth(rows, parse_intervals("0.0\t0.1\tzh\n0.1\t0.5\tang\n0.5\t0.9\ta"))


def test_rows_binary_and_tsv_roundtrip(tmp_path):
    rows = build_rows(_score(_rest(1), _ev("ma", (60, 1, "start"), (64, 1, "stop"))), "utt-1")
    rows = attach_ground_truth(rows, [IntervalEntry(Fraction(0), Fraction(1, 2), "sil"),
                                      IntervalEntry(Fraction(1, 2), Fraction(6, 10), "m"),
                                      IntervalEntry(Fraction(6, 10), Fraction(1), "a"),
                                      IntervalEntry(Fraction(1), Fraction(3, 2), "a")])
    path = tmp_path / "r.rows"
    write_rows(rows, path)
    assert path.read_bytes()[:7] == b"WSROWS1"
    assert read_rows(path) == rows
    back, extra = rows_from_tsv(rows_to_tsv(rows, {"pred_dur": [1, 2, 3, 4]}))
    assert back == rows and extra == {"pred_dur": ["1", "2", "3", "4"]}
