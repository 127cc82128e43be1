"""Chord-chart text format.

A chart is an optional time-signature line followed by bars::

    4/4
    | C | Am7 | Dm7 G7 | C:3 G7/B:1 |

Chords inside a bar are separated by whitespace. ``:beats`` fixes a chord's
length (integer, decimal or ``n/d``); chords without one share the rest of the
bar evenly. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .notes import BEATS_PER_BAR, TIME_SIGNATURES

QUALITIES: dict[str, frozenset[int]] = {
    "maj": frozenset({0, 4, 7}),
    "min": frozenset({0, 3, 7}),
    "7": frozenset({0, 4, 7, 10}),
    "maj7": frozenset({0, 4, 7, 11}),
    "min7": frozenset({0, 3, 7, 10}),
    "dim": frozenset({0, 3, 6}),
    "aug": frozenset({0, 4, 8}),
    "sus4": frozenset({0, 5, 7}),
    "min7b5": frozenset({0, 3, 6, 10}),
}

# accepted spellings -> canonical quality
_QUALITY_ALIASES = {
    "": "maj", "maj": "maj", "M": "maj",
    "m": "min", "min": "min", "-": "min",
    "7": "7", "dom7": "7",
    "maj7": "maj7", "M7": "maj7",
    "m7": "min7", "min7": "min7", "-7": "min7",
    "dim": "dim", "o": "dim",
    "aug": "aug", "+": "aug",
    "sus4": "sus4", "sus": "sus4",
    "m7b5": "min7b5", "min7b5": "min7b5", "ø": "min7b5",
}

_NOTE_NAMES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_PC_NAMES = ("C", "Db", "D", "Eb", "E", "F", "Gb", "G", "Ab", "A", "Bb", "B")
_QUALITY_SUFFIX = {"maj": "", "min": "m", "7": "7", "maj7": "maj7", "min7": "m7",
                   "dim": "dim", "aug": "aug", "sus4": "sus4", "min7b5": "m7b5"}


class ChartParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at {line}:{column}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ChordSymbol:
    root: int
    quality: str = "maj"
    bass: int | None = None

    def __post_init__(self):
        if not 0 <= self.root <= 11:
            raise ValueError(f"root {self.root} outside 0-11")
        if self.quality not in QUALITIES:
            raise ValueError(f"unknown quality {self.quality!r}")
        if self.bass is not None and not 0 <= self.bass <= 11:
            raise ValueError(f"bass {self.bass} outside 0-11")

    def transpose(self, k: int) -> "ChordSymbol":
        bass = None if self.bass is None else (self.bass + k) % 12
        return ChordSymbol((self.root + k) % 12, self.quality, bass)

    @property
    def bass_pc(self) -> int:
        return self.root if self.bass is None else self.bass

    def __str__(self):
        s = _PC_NAMES[self.root] + _QUALITY_SUFFIX[self.quality]
        if self.bass is not None:
            s += "/" + _PC_NAMES[self.bass]
        return s


def chord_pitch_classes(c: ChordSymbol) -> frozenset[int]:
    """Root-position pitch classes of the chord quality, transposed to the root."""
    return frozenset((c.root + i) % 12 for i in QUALITIES[c.quality])


@dataclass(frozen=True)
class ChordChart:
    bars: tuple[tuple[tuple[ChordSymbol, Fraction], ...], ...]
    time_signature: str = "4/4"

    def __post_init__(self):
        if self.time_signature not in TIME_SIGNATURES:
            raise ValueError(f"unsupported time signature {self.time_signature!r}")
        if not self.bars:
            raise ValueError("a chart needs at least one bar")
        for i, bar in enumerate(self.bars):
            if sum(d for _, d in bar) != BEATS_PER_BAR:
                raise ValueError(f"bar {i + 1} does not add up to {BEATS_PER_BAR} beats")

    @property
    def beats_per_bar(self) -> int:
        return BEATS_PER_BAR

    @property
    def total_beats(self) -> int:
        return len(self.bars) * BEATS_PER_BAR

    def timeline(self) -> list[tuple[Fraction, Fraction, ChordSymbol]]:
        """(start, end, chord) in beats from the top of the chart."""
        out = []
        t = Fraction(0)
        for bar in self.bars:
            for chord, dur in bar:
                out.append((t, t + dur, chord))
                t += dur
        return out

    def transpose(self, k: int) -> "ChordChart":
        bars = tuple(tuple((c.transpose(k), d) for c, d in bar) for bar in self.bars)
        return ChordChart(bars, self.time_signature)

    def to_text(self) -> str:
        parts = []
        for bar in self.bars:
            even = len({d for _, d in bar}) == 1
            parts.append(" ".join(str(c) if even else f"{c}:{_fmt(d)}" for c, d in bar))
        return f"{self.time_signature}\n| " + " | ".join(parts) + " |\n"


def _fmt(d: Fraction) -> str:
    return str(d.numerator) if d.denominator == 1 else f"{d.numerator}/{d.denominator}"


_CHORD_RE = re.compile(r"([A-G])([#b]?)([^/:\s|]*)(?:/([A-G])([#b]?))?(?::(\S+))?$")


def parse_chord(token: str, line: int = 1, column: int = 1) -> tuple[ChordSymbol, Fraction | None]:
    m = _CHORD_RE.match(token)
    if not m:
        raise ChartParseError(f"invalid chord {token!r}", line, column)
    letter, acc, qual, bass_letter, bass_acc, beats = m.groups()
    root = (_NOTE_NAMES[letter] + {"#": 1, "b": -1, "": 0}[acc]) % 12
    if qual not in _QUALITY_ALIASES:
        raise ChartParseError(f"unknown quality {qual!r}", line, column + m.start(3))
    bass = None
    if bass_letter:
        bass = (_NOTE_NAMES[bass_letter] + {"#": 1, "b": -1, "": 0}[bass_acc]) % 12
    duration = None
    if beats is not None:
        try:
            duration = Fraction(beats)
        except (ValueError, ZeroDivisionError):
            raise ChartParseError(f"invalid duration {beats!r}", line, column + m.start(6)) from None
        if duration <= 0:
            raise ChartParseError(f"non-positive duration {beats!r}", line, column + m.start(6))
    return ChordSymbol(root, _QUALITY_ALIASES[qual], bass), duration


def parse_chart(text: str) -> ChordChart:
    lines = text.splitlines()
    time_signature = "4/4"
    start = 0
    for i, raw in enumerate(lines):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "|" not in stripped:
            if not re.fullmatch(r"\d+/\d+", stripped):
                raise ChartParseError(f"expected time signature, got {stripped!r}", i + 1,
                                      raw.index(stripped[0]) + 1)
            if stripped not in TIME_SIGNATURES:
                raise ChartParseError(f"unsupported time signature {stripped!r}", i + 1,
                                      raw.index(stripped[0]) + 1)
            time_signature = stripped
            start = i + 1
        break

    bars: list[tuple[tuple[ChordSymbol, Fraction], ...]] = []
    current: list[tuple[ChordSymbol, Fraction | None]] | None = None
    bar_pos = (0, 0)
    last_pos = (1, 1)
    for lineno in range(start, len(lines)):
        raw = lines[lineno]
        if raw.strip().startswith("#"):
            continue
        for m in re.finditer(r"\||[^\s|]+", raw):
            pos = (lineno + 1, m.start() + 1)
            last_pos = pos
            tok = m.group()
            if tok == "|":
                if current is not None:
                    if not current:
                        if bar_pos[0] != pos[0]:
                            # a line ending in '|' and the next starting with '|' share the bar line
                            bar_pos = pos
                            continue
                        raise ChartParseError("empty bar", *pos)
                    bars.append(_close_bar(current, *bar_pos))
                current = []
                bar_pos = pos
            else:
                if current is None:
                    raise ChartParseError("chord before the first '|'", *pos)
                current.append(parse_chord(tok, *pos))
    if current:
        raise ChartParseError("missing closing '|'", *last_pos)
    if not bars:
        raise ChartParseError("chart has no bars", *last_pos)
    return ChordChart(tuple(bars), time_signature)


def _close_bar(chords, line: int, column: int) -> tuple[tuple[ChordSymbol, Fraction], ...]:
    fixed = sum((d for _, d in chords if d is not None), Fraction(0))
    free = [c for c, d in chords if d is None]
    remaining = BEATS_PER_BAR - fixed
    if free:
        if remaining <= 0:
            raise ChartParseError(f"bar duration mismatch: {_fmt(fixed)} beats before unsized chords",
                                  line, column)
        share = remaining / len(free)
    elif remaining != 0:
        raise ChartParseError(f"bar duration mismatch: {_fmt(fixed)} != {BEATS_PER_BAR}", line, column)
    return tuple((c, d if d is not None else share) for c, d in chords)


def load_chart(path: str | Path) -> ChordChart:
    return parse_chart(Path(path).read_text(encoding="utf-8"))


# synthetic chart corpus

# four-bar phrases as (scale-degree semitones, quality) per half bar; None repeats the previous half
_PHRASES: tuple[tuple[tuple[int, str] | None, ...], ...] = (
    ((0, "maj"), None, (9, "min"), None, (2, "min"), None, (7, "7"), None),
    ((2, "min7"), None, (7, "7"), None, (0, "maj7"), None, None, None),
    ((0, "maj"), None, (5, "maj"), None, (7, "maj"), None, (0, "maj"), None),
    ((0, "maj"), None, (7, "maj"), None, (9, "min"), None, (5, "maj"), None),
    ((9, "min"), None, (5, "maj"), None, (0, "maj"), None, (7, "maj"), None),
    ((0, "7"), None, (5, "7"), None, (0, "7"), None, None, None),
    ((5, "7"), None, None, None, (0, "7"), None, (9, "7"), None),
    ((2, "min7"), None, (7, "7"), None, (0, "maj7"), None, (7, "7"), None),
    ((4, "min7"), (9, "7"), (2, "min7"), (7, "7"), (0, "maj7"), (9, "min7"), (2, "min7"), (7, "7")),
    ((0, "maj"), None, (10, "maj"), None, (5, "maj"), None, (0, "maj"), None),
    ((0, "maj7"), (9, "min7"), (2, "min7"), (7, "7"), (0, "maj7"), (9, "min7"), (2, "min7"), (7, "7")),
    ((5, "maj7"), None, (5, "min"), None, (0, "maj"), None, (7, "sus4"), (7, "7")),
    ((11, "min7b5"), None, (4, "7"), None, (9, "min"), None, (9, "7"), None),
    ((0, "maj"), (4, "min"), (5, "maj"), (7, "7"), (0, "maj"), None, (2, "min"), (7, "7")),
    ((0, "maj"), None, (8, "aug"), None, (9, "min"), None, (1, "dim"), (2, "min7")),
    ((0, "maj"), None, (0, "7"), None, (5, "maj"), None, (7, "7"), None),
)


def _phrase_bars(phrase, key: int) -> list[tuple[tuple[ChordSymbol, Fraction], ...]]:
    halves = []
    for item in phrase:
        halves.append(halves[-1] if item is None else ChordSymbol((key + item[0]) % 12, item[1]))
    bars = []
    for i in range(0, len(halves), 2):
        a, b = halves[i], halves[i + 1]
        if a == b:
            bars.append(((a, Fraction(BEATS_PER_BAR)),))
        else:
            half = Fraction(BEATS_PER_BAR, 2)
            bars.append(((a, half), (b, half)))
    return bars


def generate_charts(n: int, seed: int, lengths: tuple[int, ...] = (16, 24, 32)) -> list[tuple[str, ChordChart]]:
    """``n`` synthetic lead sheets chained from common four-bar progressions.

    Each song has a random key and a length drawn from ``lengths`` (bars);
    chords change at most twice per bar, on half-bar boundaries.
    """
    from .numeric import Rng

    rng = Rng(seed).child("charts")
    out = []
    for i in range(n):
        key = int(rng.integers(0, 12))
        n_bars = lengths[int(rng.integers(0, len(lengths)))]
        bars: list = []
        while len(bars) < n_bars:
            bars.extend(_phrase_bars(_PHRASES[int(rng.integers(0, len(_PHRASES)))], key))
        out.append((f"song{i:04d}", ChordChart(tuple(bars[:n_bars]))))
    return out
