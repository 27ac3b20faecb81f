"""Score ingestion: MusicXML parsing, MIDI pitch mapping, pinyin splitting and
beat-to-frame conversion.

Only a documented subset of MusicXML is read: uncompressed, part-wise, the
first part, one voice. Lyrics are romanized pinyin, or hanzi resolved through
a user-supplied lexicon.
"""

from __future__ import annotations

import io
import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

from .exceptions import PhonemeError, PitchRangeError, ScoreParseError, ScoreValidationError
from .vocab import FINALS, INITIALS, SILENCE

logger = logging.getLogger(__name__)

FRAMES_PER_SECOND = 100
SLUR_FLAGS = ("start", "continue", "stop", "null")

_SEMITONE = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_STEP_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_INITIALS_LONGEST_FIRST = sorted(INITIALS, key=len, reverse=True)
_FINAL_SET = frozenset(FINALS)
_TYPE_BEATS = {
    "whole": Fraction(4), "half": Fraction(2), "quarter": Fraction(1),
    "eighth": Fraction(1, 2), "16th": Fraction(1, 4), "32nd": Fraction(1, 8),
    "64th": Fraction(1, 16),
}


@dataclass(frozen=True)
class NotePitch:
    midi: int | None = None
    rest: bool = False

    def __post_init__(self):
        if self.rest:
            if self.midi is not None:
                raise ScoreValidationError("rest pitch carries no midi number")
        elif self.midi is None or not 0 <= self.midi <= 127:
            raise PitchRangeError(f"midi {self.midi} outside [0, 127]")

    @classmethod
    def silence(cls) -> "NotePitch":
        return cls(None, True)

    @property
    def name(self) -> str:
        if self.rest:
            return "rest"
        return f"{_STEP_NAMES[self.midi % 12]}{self.midi // 12 - 1}"

    @property
    def hz(self) -> float | None:
        if self.rest:
            return None
        return 440.0 * 2.0 ** ((self.midi - 69) / 12.0)


@dataclass
class Note:
    pitch: NotePitch
    beats: Fraction
    slur: str = "null"
    tied_from_prev: bool = False

    def __post_init__(self):
        self.beats = Fraction(self.beats)
        if self.beats <= 0:
            raise ScoreValidationError(f"note beats must be positive, got {self.beats}")
        if self.slur not in SLUR_FLAGS:
            raise ScoreValidationError(f"unknown slur flag {self.slur!r}")


@dataclass
class SyllableEvent:
    pinyin: str
    notes: list[Note]

    def __post_init__(self):
        if not self.notes:
            raise ScoreValidationError("syllable event needs at least one note")
        if not self.is_rest and not self.pinyin:
            raise ScoreValidationError("sung syllable without pinyin")

    @property
    def is_rest(self) -> bool:
        return all(n.pitch.rest for n in self.notes)

    @property
    def beats(self) -> Fraction:
        return sum((n.beats for n in self.notes), Fraction(0))


@dataclass
class Score:
    bpm: float
    events: list[SyllableEvent]
    singer_id: str | None = None

    def __post_init__(self):
        if not self.bpm > 0:
            raise ScoreValidationError(f"bpm must be positive, got {self.bpm}")
        if not self.events:
            raise ScoreValidationError("score has no events")

    @property
    def notes(self) -> list[Note]:
        return [n for e in self.events for n in e.notes]

    @property
    def total_beats(self) -> Fraction:
        return sum((e.beats for e in self.events), Fraction(0))


@dataclass(frozen=True)
class PhonemeUnit:
    phoneme: str
    ptype: str

    def __post_init__(self):
        if self.ptype == "initial" and self.phoneme not in INITIALS:
            raise PhonemeError(f"{self.phoneme!r} is not an initial")


def midi_from_spn(step: str, alter: int, octave: int) -> NotePitch:
    """Map scientific pitch notation (step, alter, octave) to a MIDI note."""
    step = step.upper()
    if step not in _SEMITONE:
        raise ScoreParseError(f"invalid pitch step {step!r}")
    midi = 12 * (int(octave) + 1) + _SEMITONE[step] + int(alter)
    if not 0 <= midi <= 127:
        raise PitchRangeError(f"midi {midi} for {step}{alter:+d}/{octave} outside [0, 127]")
    return NotePitch(midi)


def beats_to_frames(beats, bpm) -> int:
    """Convert a beat count at ``bpm`` to 10 ms frames, rounding half away from zero."""
    beats = Fraction(beats)
    bpm = Fraction(bpm)
    if beats <= 0 or bpm <= 0:
        raise ScoreValidationError(f"beats and bpm must be positive, got {beats}, {bpm}")
    exact = beats * 60 * FRAMES_PER_SECOND / bpm
    return math.floor(exact + Fraction(1, 2))


def seconds_to_frames(seconds) -> int:
    """Round a non-negative time in seconds to 10 ms frames, half away from zero."""
    exact = Fraction(seconds) * FRAMES_PER_SECOND
    if exact < 0:
        raise ScoreValidationError(f"negative time {float(seconds)}")
    return math.floor(exact + Fraction(1, 2))


_TONE = re.compile(r"[0-9]")


def normalize_pinyin(syllable: str) -> str:
    """Lowercase and strip tone digits (tones are not model inputs)."""
    text = syllable.strip().lower()
    if _TONE.search(text):
        logger.warning("stripping tone digits from %r", syllable)
        text = _TONE.sub("", text)
    return text


def split_pinyin(syllable: str) -> list[PhonemeUnit]:
    """Split one pinyin syllable into ``[initial, final]`` or ``[single_final]``.

    The initial is the longest matching prefix from the 21-initial table, so
    ``"chi"`` gives ``ch`` + ``i`` rather than ``c`` + ``hi``.
    """
    text = normalize_pinyin(syllable)
    if not text:
        raise PhonemeError("empty syllable")
    initial = next((i for i in _INITIALS_LONGEST_FIRST if text.startswith(i)), None)
    final = text[len(initial):] if initial else text
    if not final:
        raise PhonemeError(f"no final in syllable {syllable!r}")
    if final.endswith("r") and final != "er":
        raise PhonemeError(f"erhua/retroflex syllable {syllable!r} is not supported")
    if final not in _FINAL_SET:
        raise PhonemeError(f"unknown final {final!r} in syllable {syllable!r}")
    if initial:
        return [PhonemeUnit(initial, "initial"), PhonemeUnit(final, "final")]
    return [PhonemeUnit(final, "single_final")]


def phonemize(event: SyllableEvent) -> list[PhonemeUnit]:
    if event.is_rest:
        return [PhonemeUnit(SILENCE, "silence")]
    return split_pinyin(event.pinyin)


def load_lexicon(source) -> dict[str, str]:
    """Read ``hanzi<TAB>pinyin`` lines from a path or an iterable of lines."""
    if isinstance(source, (str, Path)):
        lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source
    lexicon = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ScoreParseError(f"lexicon line {lineno}: expected 'hanzi<TAB>pinyin'")
        lexicon[parts[0]] = normalize_pinyin(parts[1])
    return lexicon


def _lyric_to_pinyin(text: str, lexicon: Mapping[str, str] | None) -> str:
    text = text.strip()
    if text.isascii():
        return normalize_pinyin(text)
    if lexicon is None:
        raise ScoreValidationError(f"lyric {text!r} is not romanized and no lexicon was given")
    if text not in lexicon:
        raise ScoreValidationError(f"lyric {text!r} missing from lexicon")
    return lexicon[text]


def _note_beats(el: ET.Element, divisions: int) -> Fraction:
    dur = el.findtext("duration")
    if dur is not None:
        return Fraction(int(dur.strip()), divisions)
    kind = el.findtext("type")
    if kind is None or kind.strip() not in _TYPE_BEATS:
        raise ScoreParseError("note without duration or recognizable type")
    beats = base = _TYPE_BEATS[kind.strip()]
    for _ in el.findall("dot"):
        base /= 2
        beats += base
    return beats


def _slur_flag(el: ET.Element) -> str:
    kinds = {s.get("type") for s in el.findall("notations/slur")}
    if "start" in kinds and "stop" in kinds:
        return "continue"
    for k in ("start", "continue", "stop"):
        if k in kinds:
            return k
    return "null"


def _is_tie_stop(el: ET.Element) -> bool:
    return any(t.get("type") == "stop" for t in el.findall("tie")) or any(
        t.get("type") == "stop" for t in el.findall("notations/tied")
    )


def _tempo_of(el: ET.Element) -> float | None:
    """Quarter-note tempo from a <sound> or <metronome> inside ``el``."""
    for snd in el.iter("sound"):
        if snd.get("tempo"):
            return float(snd.get("tempo"))
    for met in el.iter("metronome"):
        per_minute = met.findtext("per-minute")
        unit = (met.findtext("beat-unit") or "quarter").strip()
        if per_minute and unit in _TYPE_BEATS:
            scale = _TYPE_BEATS[unit]
            if met.find("beat-unit-dot") is not None:
                scale *= Fraction(3, 2)
            return float(per_minute) * float(scale)
    return None


def parse_musicxml(
    document, lexicon: Mapping[str, str] | None = None, singer_id: str | None = None
) -> Score:
    """Parse a part-wise MusicXML document into a :class:`Score`.

    ``document`` may be bytes, text, a path or a binary file object. A note
    without a new lyric extends the previous syllable; consecutive rests
    collapse into one silence event; tied notes merge into one.
    """
    if isinstance(document, Path):
        document = document.read_bytes()
    elif hasattr(document, "read"):
        document = document.read()
    try:
        root = ET.parse(io.BytesIO(document.encode() if isinstance(document, str) else document)).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise ScoreParseError(f"malformed XML at line {line}, column {col}: {exc}") from None
    if root.tag != "score-partwise":
        raise ScoreParseError(f"expected <score-partwise>, got <{root.tag}>")
    part = root.find("part")
    if part is None:
        raise ScoreParseError("score has no <part>")

    if not any((t.text or "").strip() for t in part.iter("text")):
        raise ScoreValidationError("no lyric events")

    divisions = 1
    bpm: float | None = None
    voice: str | None = None
    events: list[SyllableEvent] = []

    for measure in part.findall("measure"):
        number = measure.get("number", "?")
        for el in measure:
            if el.tag == "attributes" and el.findtext("divisions"):
                divisions = int(el.findtext("divisions"))
            elif el.tag in ("direction", "sound"):
                tempo = _tempo_of(el) if el.tag == "direction" else (
                    float(el.get("tempo")) if el.get("tempo") else None)
                if tempo is not None:
                    if bpm is None:
                        bpm = tempo
                    elif tempo != bpm:
                        logger.warning("ignoring tempo change to %s in measure %s", tempo, number)
            elif el.tag == "note":
                if el.find("grace") is not None or el.find("chord") is not None:
                    continue
                v = el.findtext("voice", "1").strip()
                if voice is None:
                    voice = v
                elif v != voice:
                    continue
                beats = _note_beats(el, divisions)
                lyric_el = el.find("lyric")
                text = lyric_el.findtext("text") if lyric_el is not None else None
                text = text.strip() if text else None
                if el.find("rest") is not None:
                    if text:
                        raise ScoreValidationError(f"lyric on a rest in measure {number}")
                    note = Note(NotePitch.silence(), beats)
                    if events and events[-1].is_rest:
                        events[-1].notes[0].beats += beats
                    else:
                        events.append(SyllableEvent("", [note]))
                    continue
                p = el.find("pitch")
                if p is None:
                    raise ScoreParseError(f"note without <pitch> or <rest> in measure {number}")
                pitch = midi_from_spn(
                    p.findtext("step", "").strip(),
                    int(float(p.findtext("alter", "0"))),
                    int(p.findtext("octave", "")),
                )
                note = Note(pitch, beats, _slur_flag(el))
                tie_stop = _is_tie_stop(el)
                if text:
                    note.tied_from_prev = tie_stop
                    events.append(SyllableEvent(_lyric_to_pinyin(text, lexicon), [note]))
                    continue
                if not events or events[-1].is_rest:
                    raise ScoreValidationError(f"note without lyric in measure {number}")
                prev = events[-1].notes[-1]
                if tie_stop and prev.pitch == pitch:
                    prev.beats += beats
                else:
                    events[-1].notes.append(note)

    if bpm is None:
        raise ScoreValidationError("tempo required")
    for event in events:
        _normalize_melisma_slurs(event)
        if not event.is_rest:
            split_pinyin(event.pinyin)
    return Score(bpm, events, singer_id)


def _normalize_melisma_slurs(event: SyllableEvent) -> None:
    # melismas often lack explicit slur marks; flag them by position
    if event.is_rest or len(event.notes) < 2:
        return
    last = len(event.notes) - 1
    for i, note in enumerate(event.notes):
        note.slur = "start" if i == 0 else "stop" if i == last else "continue"


def transpose_score(score: Score, semitones: int) -> Score:
    """Shift every sung note by ``semitones``; rests and timing are unchanged."""
    events = []
    for e in score.events:
        notes = []
        for n in e.notes:
            if n.pitch.rest:
                notes.append(replace(n))
                continue
            midi = n.pitch.midi + semitones
            if not 0 <= midi <= 127:
                raise PitchRangeError(f"transposing {n.pitch.name} by {semitones} leaves the MIDI range")
            notes.append(replace(n, pitch=NotePitch(midi)))
        events.append(SyllableEvent(e.pinyin, notes))
    return Score(score.bpm, events, score.singer_id)


def _spn(midi: int) -> tuple[str, int, int]:
    name = _STEP_NAMES[midi % 12]
    return name[0], (1 if name.endswith("#") else 0), midi // 12 - 1


def write_musicxml(score: Score, beats_per_measure: int = 4) -> bytes:
    """Serialize a score to the MusicXML subset that :func:`parse_musicxml` reads.

    Notes are packed greedily into measures and never split across bar
    lines, which is enough for round-tripping but not for engraving.
    """
    divisions = math.lcm(*(n.beats.denominator for n in score.notes))
    root = ET.Element("score-partwise", version="3.1")
    plist = ET.SubElement(root, "part-list")
    sp = ET.SubElement(plist, "score-part", id="P1")
    ET.SubElement(sp, "part-name").text = score.singer_id or "voice"
    part = ET.SubElement(root, "part", id="P1")

    measure_no = 1
    measure = ET.SubElement(part, "measure", number="1")
    attrs = ET.SubElement(measure, "attributes")
    ET.SubElement(attrs, "divisions").text = str(divisions)
    direction = ET.SubElement(measure, "direction", placement="above")
    met = ET.SubElement(ET.SubElement(direction, "direction-type"), "metronome")
    ET.SubElement(met, "beat-unit").text = "quarter"
    ET.SubElement(met, "per-minute").text = f"{score.bpm:g}"
    ET.SubElement(direction, "sound", tempo=f"{score.bpm:g}")
    filled = Fraction(0)

    for event in score.events:
        for k, n in enumerate(event.notes):
            if filled >= beats_per_measure:
                measure_no += 1
                measure = ET.SubElement(part, "measure", number=str(measure_no))
                filled = Fraction(0)
            el = ET.SubElement(measure, "note")
            if n.pitch.rest:
                ET.SubElement(el, "rest")
            else:
                step, alter, octave = _spn(n.pitch.midi)
                p = ET.SubElement(el, "pitch")
                ET.SubElement(p, "step").text = step
                if alter:
                    ET.SubElement(p, "alter").text = str(alter)
                ET.SubElement(p, "octave").text = str(octave)
            ET.SubElement(el, "duration").text = str(int(n.beats * divisions))
            ET.SubElement(el, "voice").text = "1"
            kind = next((t for t, b in _TYPE_BEATS.items() if b == n.beats), None)
            if kind:
                ET.SubElement(el, "type").text = kind
            if n.slur != "null":
                notations = ET.SubElement(el, "notations")
                if n.slur == "continue":
                    ET.SubElement(notations, "slur", type="stop")
                    ET.SubElement(notations, "slur", type="start")
                else:
                    ET.SubElement(notations, "slur", type=n.slur)
            if k == 0 and not event.is_rest:
                lyric = ET.SubElement(el, "lyric", number="1")
                ET.SubElement(lyric, "syllabic").text = "single"
                ET.SubElement(lyric, "text").text = event.pinyin
            filled += n.beats
    ET.indent(root)
    return b'<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="utf-8")
