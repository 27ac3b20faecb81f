"""Seeded desk-scale singing corpus: scores, aligned intervals and rendered audio.

Finals are a sawtooth at the note pitch through a vowel-dependent all-pole
filter, so the reference F0 of every voiced frame is known. Consonants are
band-limited noise (or a weak low-passed buzz for nasals and liquids).

Durations follow a simple time-lag model: a consonant starts before its
note onset by half its base length, taking those frames from the previous
syllable, and the consonant/vowel split carries a few frames of jitter.
Syllable totals are therefore a deterministic function of the score and the
next syllable's consonant, while individual rows are noisy.

Singers share pitch and lyric distributions. Singer 1 marks phrases with
slurs (ignored by the renderer) and has a raised formant scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .dsp import Waveform, write_wav
from .score import Note, NotePitch, Score, SyllableEvent, write_musicxml
from .sequence import IntervalEntry, PhonemeRow, build_rows, format_intervals, syllable_groups

SAMPLE_RATE = 24000
HOP = 240

SYLLABLES = (
    "ma", "ni", "hao", "wo", "ai", "zhang", "shi", "de", "yi", "bu", "le", "qing", "xin",
    "yue", "guang", "an", "ou", "lan", "tian", "feng", "yu", "hua", "kai", "chun", "shan",
    "shui", "liu", "mei", "ren", "ge", "sheng", "meng", "xiang", "fei", "deng", "qu", "zai",
    "ci", "song", "jia",
)

CONSONANT_FRAMES = {
    "b": 4, "p": 8, "m": 7, "f": 9, "d": 4, "t": 8, "n": 7, "l": 6, "g": 4, "k": 8,
    "h": 9, "j": 7, "q": 10, "x": 11, "zh": 8, "ch": 11, "sh": 12, "r": 7, "z": 7,
    "c": 10, "s": 12,
}
_VOICED_CONSONANTS = frozenset({"m", "n", "l", "r"})
_SIBILANTS = frozenset({"s", "sh", "x", "c", "ch", "q", "z", "zh", "j"})

_VOWEL_FORMANTS = {
    "a": (800.0, 1250.0), "o": (520.0, 900.0), "e": (560.0, 1600.0),
    "i": (300.0, 2250.0), "u": (330.0, 800.0), "v": (300.0, 1850.0),
}
_THIRD_FORMANT = 2800.0
SINGER_FORMANT_SCALE = (1.0, 1.15)

_BEAT_CHOICES = (Fraction(1, 2), Fraction(1, 2), Fraction(1), Fraction(1), Fraction(3, 2), Fraction(2))


@dataclass
class SynthSong:
    utterance_id: str
    singer_id: str
    score: Score
    rows: list[PhonemeRow]
    intervals: list[IntervalEntry]
    waveform: Waveform | None = None


def _random_score(rng, singer: int, phrases: tuple[int, int], syllables: tuple[int, int]) -> Score:
    bpm = int(rng.integers(72, 108))
    events = [SyllableEvent("", [Note(NotePitch.silence(), Fraction(1))])]
    midi = int(rng.integers(54, 63))
    n_phrases = int(rng.integers(phrases[0], phrases[1] + 1))
    for p in range(n_phrases):
        n_syl = int(rng.integers(syllables[0], syllables[1] + 1))
        for s in range(n_syl):
            notes = []
            n_notes = 2 if rng.random() < 0.15 else 1
            for _ in range(n_notes):
                midi = int(np.clip(midi + rng.integers(-3, 4), 50, 66))
                beats = _BEAT_CHOICES[int(rng.integers(len(_BEAT_CHOICES)))]
                notes.append(Note(NotePitch(midi), beats))
            if n_notes > 1:
                notes[0].slur, notes[-1].slur = "start", "stop"
            elif singer == 1:
                notes[0].slur = "start" if s == 0 else "stop" if s == n_syl - 1 else "continue"
            events.append(SyllableEvent(SYLLABLES[int(rng.integers(len(SYLLABLES)))], notes))
        rest = Fraction(1) if p == n_phrases - 1 else Fraction(int(rng.integers(1, 3)), 2)
        events.append(SyllableEvent("", [Note(NotePitch.silence(), rest)]))
    return Score(bpm=bpm, events=events, singer_id=str(singer))


def _lead(rows_of_syllable) -> int:
    first = rows_of_syllable[0]
    if first.ptype != "initial":
        return 0
    return (CONSONANT_FRAMES[first.phoneme] + 1) // 2


def assign_durations(rows: list[PhonemeRow], rng) -> list[int]:
    """Ground-truth frames per row under the time-lag model; sums to Σ nominal."""
    groups = syllable_groups(rows)
    starts = np.cumsum([0] + [sum(rows[i].nominal_dur for i in g) for g in groups])
    leads = [_lead([rows[i] for i in g]) for g in groups] + [0]
    gt = [0] * len(rows)
    for k, g in enumerate(groups):
        lo, hi = starts[k] - leads[k], starts[k + 1] - leads[k + 1]
        syl = [rows[i] for i in g]
        if syl[0].is_silence:
            gt[g[0]] = int(hi - lo)
            continue
        bounds = [lo]
        if syl[0].ptype == "initial":
            c = CONSONANT_FRAMES[syl[0].phoneme] + int(rng.integers(-3, 4))
            bounds.append(lo + max(c, 2))
        finals = [r for r in syl if r.ptype != "initial"]
        # later notes of a melisma start exactly on their score onsets
        edge = starts[k]
        for r in finals[:-1]:
            edge += r.bt
            bounds.append(edge)
        bounds.append(hi)
        for i, (a, b) in enumerate(zip(bounds, bounds[1:])):
            gt[g[i]] = int(b - a)
    if min(gt) < 1 or sum(gt) != int(starts[-1]):
        raise AssertionError("duration model produced an invalid layout")
    return gt


def intervals_from_rows(rows: list[PhonemeRow], gt: list[int]) -> list[IntervalEntry]:
    edges = np.cumsum([0] + list(gt))
    return [IntervalEntry(Fraction(int(a), 100), Fraction(int(b), 100), r.phoneme)
            for r, a, b in zip(rows, edges, edges[1:])]


def _resonator(formants, scale):
    a = np.array([1.0])
    for f, bw in zip(formants, (80.0, 100.0, 140.0)):
        r = np.exp(-np.pi * bw / SAMPLE_RATE)
        theta = 2 * np.pi * min(f * scale, 0.45 * SAMPLE_RATE) / SAMPLE_RATE
        a = np.convolve(a, [1.0, -2 * r * np.cos(theta), r * r])
    return a


def _vowel_of(final: str) -> str:
    for ch in final:
        if ch in "aoeuv":
            return ch
    return "i"


def render(rows: list[PhonemeRow], gt: list[int], singer: int, rng) -> Waveform:
    """Sample-accurate audio whose analysis frame count equals Σ gt."""
    n_frames = int(sum(gt))
    x = np.zeros(n_frames * HOP + HOP)
    scale = SINGER_FORMANT_SCALE[singer % len(SINGER_FORMANT_SCALE)]
    phase = 0.0
    zi = None
    sib = butter(4, [3500, 9000], btype="band", fs=SAMPLE_RATE, output="sos")
    fric = butter(2, [1000, 5000], btype="band", fs=SAMPLE_RATE, output="sos")
    cursor = HOP  # analysis frame t is centred on sample t*HOP + HOP
    for row, d in zip(rows, gt):
        n = d * HOP
        seg = slice(cursor, cursor + n)
        ramp = np.minimum(1.0, np.minimum(np.arange(n) + 1, n - np.arange(n)) / 120.0)
        if row.is_silence:
            x[seg] = 1e-4 * rng.standard_normal(n)
        elif row.ptype == "initial" and row.phoneme not in _VOICED_CONSONANTS:
            noise = rng.standard_normal(n)
            noise = sosfilt(sib if row.phoneme in _SIBILANTS else fric, noise)
            x[seg] = 0.08 * noise * ramp
        else:
            hz = row.pi.hz
            inc = hz / SAMPLE_RATE
            ph = (phase + inc * np.arange(1, n + 1)) % 1.0
            phase = float(ph[-1])
            saw = 2.0 * ph - 1.0
            if row.ptype == "initial":
                a = _resonator(((250.0, 1800.0)[0], 1800.0, _THIRD_FORMANT), scale)
                amp = 0.05
            else:
                a = _resonator((*_VOWEL_FORMANTS[_vowel_of(row.phoneme)], _THIRD_FORMANT), scale)
                amp = 0.25
            if zi is None or zi.size != a.size - 1:
                zi = np.zeros(a.size - 1)
            y, zi = lfilter([1.0], a, saw, zi=zi)
            gain = np.sqrt(np.mean(y * y)) + 1e-9
            x[seg] = amp * ramp * y / gain
        cursor += n
    x[:HOP] = 1e-4 * rng.standard_normal(HOP)
    return Waveform(np.clip(x, -1.0, 1.0))


def generate_song(rng, singer: int, utterance_id: str, phrases=(4, 7), syllables=(2, 5),
                  with_audio: bool = True) -> SynthSong:
    score = _random_score(rng, singer, phrases, syllables)
    nominal = build_rows(score, utterance_id)
    gt = assign_durations(nominal, rng)
    rows = [PhonemeRow(**{**r.__dict__, "gt_dur": g}) for r, g in zip(nominal, gt)]
    wave = render(rows, gt, singer, rng) if with_audio else None
    return SynthSong(utterance_id, str(singer), score, rows, intervals_from_rows(rows, gt), wave)


def generate_corpus(n_singers: int, n_songs: int, seed: int, phrases=(4, 7), syllables=(2, 5),
                    with_audio: bool = True) -> list[SynthSong]:
    """``n_songs`` songs per singer, interleaved by singer, fully determined by ``seed``."""
    if n_singers < 1 or n_songs < 1:
        raise ValueError("need at least one singer and one song")
    songs = []
    for i in range(n_songs):
        for s in range(n_singers):
            rng = np.random.default_rng([seed, s, i])
            songs.append(generate_song(rng, s, f"s{s}_{i:03d}", phrases, syllables, with_audio))
    return songs


def write_corpus(songs: list[SynthSong], out_dir) -> Path:
    """Write scores, intervals, audio and a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("scores", "intervals", "wav"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for song in songs:
        uid = song.utterance_id
        (out / "scores" / f"{uid}.musicxml").write_bytes(write_musicxml(song.score))
        (out / "intervals" / f"{uid}.tsv").write_text(format_intervals(song.intervals))
        entry = {"utterance_id": uid, "singer_id": song.singer_id,
                 "score": f"scores/{uid}.musicxml", "intervals": f"intervals/{uid}.tsv"}
        if song.waveform is not None:
            write_wav(out / "wav" / f"{uid}.wav", song.waveform)
            entry["wav"] = f"wav/{uid}.wav"
        lines.append(json.dumps(entry, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
