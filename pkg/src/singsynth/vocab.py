"""Fixed, versioned symbol tables for the phoneme-level model inputs.

Ids are positions in the tuples below; changing a table means bumping
``VOCAB_VERSION`` because checkpoints embed these ids.
"""

from __future__ import annotations

from .exceptions import PhonemeError

VOCAB_VERSION = 1

SILENCE = "sil"

# Standard Mandarin initials. Order matters only for ids.
INITIALS = (
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h",
    "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s",
)

# Finals as they are written after an initial, plus the y-/w- spellings that
# occur as whole syllables. "v" stands for u-umlaut in ascii pinyin.
FINALS = (
    "a", "o", "e", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong", "er",
    "i", "ia", "ie", "iao", "iu", "ian", "in", "iang", "ing", "iong",
    "u", "ua", "uo", "uai", "ui", "uan", "un", "uang", "ueng", "ue",
    "v", "ve", "van", "vn",
    "ya", "yo", "ye", "yao", "you", "yan", "yin", "yang", "ying", "yong",
    "yi", "yu", "yue", "yuan", "yun",
    "wa", "wo", "wai", "wei", "wan", "wen", "wang", "weng", "wu",
)

PHONEMES = (SILENCE,) + INITIALS + FINALS
PHONEME_TYPES = ("silence", "initial", "final", "single_final")
SLURS = ("null", "start", "continue", "stop")

# Pitch ids: 0 is the rest, MIDI n maps to n + 1.
N_PITCH_IDS = 129

_PHONEME_ID = {p: i for i, p in enumerate(PHONEMES)}
_TYPE_ID = {t: i for i, t in enumerate(PHONEME_TYPES)}
_SLUR_ID = {s: i for i, s in enumerate(SLURS)}


def phoneme_id(phoneme: str) -> int:
    try:
        return _PHONEME_ID[phoneme]
    except KeyError:
        raise PhonemeError(f"unknown phoneme {phoneme!r}") from None


def ptype_id(ptype: str) -> int:
    try:
        return _TYPE_ID[ptype]
    except KeyError:
        raise PhonemeError(f"unknown phoneme type {ptype!r}") from None


def slur_id(slur: str | None) -> int:
    try:
        return _SLUR_ID["null" if slur is None else slur]
    except KeyError:
        raise PhonemeError(f"unknown slur flag {slur!r}") from None


def pitch_id(midi: int | None) -> int:
    """Map a MIDI number (or ``None`` for a rest) to its embedding id."""
    if midi is None:
        return 0
    if not 0 <= midi <= 127:
        raise PhonemeError(f"midi {midi} outside [0, 127]")
    return midi + 1


def check_ids(ph, pt, pi, sr) -> None:
    """Raise if any id array holds an out-of-vocabulary value."""
    for name, ids, size in (
        ("phoneme", ph, len(PHONEMES)),
        ("phoneme type", pt, len(PHONEME_TYPES)),
        ("pitch", pi, N_PITCH_IDS),
        ("slur", sr, len(SLURS)),
    ):
        for v in ids:
            if not 0 <= int(v) < size:
                raise PhonemeError(f"unknown {name} id {int(v)}")
