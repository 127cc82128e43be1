"""Beat-based note model shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

TIME_SIGNATURES = ("4/4", "12/8")
BEATS_PER_BAR = 4
TICKS_PER_BEAT_GRID = 12  # finest grid: 12ths of a beat


@dataclass(frozen=True, slots=True)
class Note:
    pitch: int
    onset: float
    offset: float

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside 0-127")
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if not self.offset > self.onset:
            raise ValueError(f"degenerate note: offset {self.offset} <= onset {self.onset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def sort_key(self):
        return (self.onset, self.pitch, self.offset)

    def shifted(self, beats: float = 0.0, semitones: int = 0) -> "Note":
        return Note(self.pitch + semitones, self.onset + beats, self.offset + beats)


@dataclass(frozen=True)
class NoteList:
    """Notes sorted by (onset, pitch), tagged with the time signature."""

    notes: tuple[Note, ...] = ()
    time_signature: str = "4/4"

    def __post_init__(self):
        if self.time_signature not in TIME_SIGNATURES:
            raise ValueError(f"unsupported time signature {self.time_signature!r}")
        object.__setattr__(self, "notes", tuple(sorted(self.notes, key=Note.sort_key)))

    def __iter__(self) -> Iterator[Note]:
        return iter(self.notes)

    def __len__(self) -> int:
        return len(self.notes)

    def __getitem__(self, i):
        return self.notes[i]

    @property
    def end(self) -> float:
        return max((n.offset for n in self.notes), default=0.0)

    def transposed(self, semitones: int) -> "NoteList":
        return NoteList(tuple(n.shifted(semitones=semitones) for n in self.notes), self.time_signature)

    def shifted(self, beats: float) -> "NoteList":
        return NoteList(tuple(n.shifted(beats=beats) for n in self.notes), self.time_signature)

    @classmethod
    def merge(cls, lists: Iterable["NoteList"], time_signature: str | None = None) -> "NoteList":
        lists = list(lists)
        if time_signature is None:
            time_signature = lists[0].time_signature if lists else "4/4"
        return cls(tuple(n for nl in lists for n in nl.notes), time_signature)


def grid(twelfths: int) -> float:
    """Beat position of an integer count of 12ths of a beat."""
    return twelfths / TICKS_PER_BEAT_GRID


def to_twelfths(beats: float) -> int:
    """Round a beat position to the nearest 12th (half-up)."""
    return int(beats * TICKS_PER_BEAT_GRID + 0.5) if beats >= 0 else -int(-beats * TICKS_PER_BEAT_GRID + 0.5)


@dataclass(frozen=True)
class Track:
    """One instrument part of a :class:`Song`."""

    role: str
    notes: NoteList
    program: int = 0
    name: str = ""


ROLES = ("bass", "piano", "guitar", "strings", "drums", "other")


@dataclass
class Song:
    tracks: list[Track] = field(default_factory=list)
    time_signature: str = "4/4"
    beats_per_bar: int = BEATS_PER_BAR
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.time_signature not in TIME_SIGNATURES:
            raise ValueError(f"unsupported time signature {self.time_signature!r}")
        for t in self.tracks:
            if t.role not in ROLES:
                raise ValueError(f"unknown track role {t.role!r}")
            if t.notes.time_signature != self.time_signature:
                raise ValueError("track time signature differs from song")

    def roles(self) -> dict[str, NoteList]:
        """Tracks merged per role."""
        out: dict[str, list[NoteList]] = {}
        for t in self.tracks:
            out.setdefault(t.role, []).append(t.notes)
        return {r: NoteList.merge(v, self.time_signature) for r, v in out.items()}

    def __eq__(self, other):
        if not isinstance(other, Song):
            return NotImplemented
        return (self.time_signature == other.time_signature
                and self.beats_per_bar == other.beats_per_bar
                and self.tracks == other.tracks)
