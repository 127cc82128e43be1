"""Segment tracks into 8-bar units and convert them to model representations.

Two encodings are supported: a binary piano roll (128 pitches x 4 columns per
beat) used as encoder input, and a token stream of NoteOn / NoteOff /
TimeShift events (times in 12ths of a beat) used as decoder output and as an
alternative encoder input.

Token ids::

    0 PAD, 1 BOS, 2 EOS,
    3..130    NoteOn(0..127)
    131..258  NoteOff(0..127)
    259       NoteOff(All)
    260..283  TimeShift(1..24)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .notes import BEATS_PER_BAR, Note, NoteList, grid, to_twelfths

SEGMENT_BARS = 8
SEGMENT_BEATS = SEGMENT_BARS * BEATS_PER_BAR  # 32
SEGMENT_TWELFTHS = SEGMENT_BEATS * 12  # 384
ROLL_COLUMNS_PER_BEAT = 4
MAX_SHIFT = 24


@dataclass(frozen=True)
class Segment:
    notes: NoteList
    bars: int = SEGMENT_BARS
    beats_per_bar: int = BEATS_PER_BAR

    def __post_init__(self):
        limit = self.length
        for n in self.notes:
            if n.onset >= limit or n.offset > limit + 1e-9:
                raise ValueError(f"note {n} outside segment of {limit} beats")

    @property
    def length(self) -> int:
        return self.bars * self.beats_per_bar

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)


def empty_segment(time_signature: str = "4/4") -> Segment:
    return Segment(NoteList((), time_signature))


# segmentation

def segment(track: NoteList, total_beats: float | None = None,
            beats_per_bar: int = BEATS_PER_BAR) -> list[Segment]:
    """Cut a track into consecutive 8-bar segments.

    Notes crossing a boundary are split. A trailing partial window is kept
    (zero-padded) when it spans at least one bar, otherwise dropped.
    ``total_beats`` overrides the track extent, so sibling tracks of one song
    can be cut into the same number of segments.
    """
    seg_beats = SEGMENT_BARS * beats_per_bar
    end = track.end if total_beats is None else total_beats
    if end <= 0:
        return []
    full, rest = divmod(end, seg_beats)
    count = int(full) + (1 if rest >= beats_per_bar - 1e-9 else 0)
    buckets: list[list[Note]] = [[] for _ in range(count)]
    for n in track:
        first = int(n.onset // seg_beats)
        last = int((n.offset - 1e-9) // seg_beats)
        for idx in range(first, min(last, count - 1) + 1):
            start = idx * seg_beats
            on = max(n.onset, start) - start
            off = min(n.offset, start + seg_beats) - start
            if off > on:
                buckets[idx].append(Note(n.pitch, on, off))
    return [Segment(NoteList(tuple(b), track.time_signature), SEGMENT_BARS, beats_per_bar)
            for b in buckets]


def concat_segments(segments: Sequence[Segment]) -> NoteList:
    """Join segments end to end (the inverse of :func:`segment` up to splits)."""
    notes = []
    ts = segments[0].notes.time_signature if segments else "4/4"
    offset = 0
    for seg in segments:
        notes.extend(n.shifted(beats=offset) for n in seg)
        offset += seg.length
    return NoteList(tuple(notes), ts)


def quantize(seg: Segment) -> Segment:
    """Snap a segment to the 12ths grid with a minimum duration of one 12th."""
    notes = []
    limit = seg.length * 12
    for n in seg:
        on = min(to_twelfths(n.onset), limit - 1)
        off = min(max(to_twelfths(n.offset), on + 1), limit)
        notes.append(Note(n.pitch, grid(on), grid(off)))
    return Segment(NoteList(tuple(notes), seg.notes.time_signature), seg.bars, seg.beats_per_bar)


# piano roll

def to_piano_roll(seg: Segment) -> np.ndarray:
    cols = seg.length * ROLL_COLUMNS_PER_BEAT
    roll = np.zeros((128, cols), dtype=np.float32)
    for n in seg:
        start = min(int(n.onset * ROLL_COLUMNS_PER_BEAT + 0.5), cols - 1)
        stop = min(max(int(n.offset * ROLL_COLUMNS_PER_BEAT + 0.5), start + 1), cols)
        roll[n.pitch, start:stop] = 1.0
    return roll


# events

@dataclass(frozen=True, slots=True)
class Event:
    kind: str  # "on", "off", "off_all", "shift", "bos", "eos", "pad"
    value: int = 0

    def __str__(self):
        if self.kind == "on":
            return f"NoteOn({self.value})"
        if self.kind == "off":
            return f"NoteOff({self.value})"
        if self.kind == "off_all":
            return "NoteOff(All)"
        if self.kind == "shift":
            return f"TimeShift({self.value})"
        return self.kind.upper()


BOS = Event("bos")
EOS = Event("eos")
PAD = Event("pad")
NOTE_OFF_ALL = Event("off_all")


def NoteOn(p: int) -> Event:  # noqa: N802 - token constructors read like the token names
    return Event("on", p)


def NoteOff(p: int) -> Event:  # noqa: N802
    return Event("off", p)


def TimeShift(d: int) -> Event:  # noqa: N802
    if not 1 <= d <= MAX_SHIFT:
        raise ValueError(f"TimeShift({d}) outside 1-{MAX_SHIFT}")
    return Event("shift", d)


def parse_event(text: str) -> Event:
    text = text.strip()
    upper = text.upper()
    if upper in ("BOS", "EOS", "PAD"):
        return Event(upper.lower())
    if text == "NoteOff(All)":
        return NOTE_OFF_ALL
    for prefix, ctor in (("NoteOn(", NoteOn), ("NoteOff(", NoteOff), ("TimeShift(", TimeShift)):
        if text.startswith(prefix) and text.endswith(")"):
            return ctor(int(text[len(prefix):-1]))
    raise ValueError(f"cannot parse event {text!r}")


def _shifts(gap: int) -> list[Event]:
    out = [TimeShift(MAX_SHIFT)] * (gap // MAX_SHIFT)
    if gap % MAX_SHIFT:
        out.append(TimeShift(gap % MAX_SHIFT))
    return out


def encode_events(seg: Segment, compress_offs: bool = False) -> list[Event]:
    """Encode a segment as BOS, events..., EOS.

    At equal times note-offs come before note-ons, each group by ascending
    pitch. With ``compress_offs``, an instant at which every sounding note
    ends, and at least two do, becomes a single NoteOff(All).
    """
    q = quantize(seg)
    ons: dict[int, list[int]] = {}
    offs: dict[int, list[int]] = {}
    for n in q:
        ons.setdefault(to_twelfths(n.onset), []).append(n.pitch)
        offs.setdefault(to_twelfths(n.offset), []).append(n.pitch)

    events = [BOS]
    sounding = 0
    clock = 0
    for t in sorted(set(ons) | set(offs)):
        events.extend(_shifts(t - clock))
        clock = t
        ending = sorted(offs.get(t, ()))
        if ending:
            if compress_offs and len(ending) >= 2 and len(ending) == sounding:
                events.append(NOTE_OFF_ALL)
            else:
                events.extend(NoteOff(p) for p in ending)
            sounding -= len(ending)
        starting = sorted(ons.get(t, ()))
        events.extend(NoteOn(p) for p in starting)
        sounding += len(starting)
    events.append(EOS)
    return events


@dataclass
class DecodeResult:
    segment: Segment
    anomalies: int = 0
    details: list[str] = field(default_factory=list)


def decode_events(events: Iterable[Event], bars: int = SEGMENT_BARS,
                  beats_per_bar: int = BEATS_PER_BAR, time_signature: str = "4/4") -> DecodeResult:
    """Decode a (possibly malformed) event stream into a segment.

    Malformed input never raises. Each anomaly (note-off with nothing open,
    note-on of an already sounding pitch, zero-length note, time running past
    the segment end, notes left open at the end, missing EOS) is counted.
    Notes still open when the stream ends are closed at the segment end.
    """
    limit = bars * beats_per_bar * 12
    clock = 0
    open_notes: dict[int, list[int]] = {}
    done: list[tuple[int, int, int]] = []
    details: list[str] = []
    overflowed = False
    terminated = False

    def close(pitch: int, start: int, end: int):
        end = min(end, limit)
        if end > start:
            done.append((pitch, start, end))
        else:
            details.append(f"zero-length note {pitch} at {start}")

    started = False
    for ev in events:
        if ev.kind == "bos" and not started:
            started = True
            continue
        started = True
        if ev.kind == "eos":
            terminated = True
            break
        if ev.kind in ("pad", "bos"):
            details.append(f"stray {ev}")
            continue
        if ev.kind == "shift":
            clock += ev.value
            if clock > limit and not overflowed:
                overflowed = True
                details.append(f"time overflow at {clock}")
            continue
        if ev.kind == "on":
            if clock >= limit:
                # notes starting at or past the segment end are dropped
                if clock == limit:
                    details.append(f"NoteOn({ev.value}) at segment end")
                continue
            if open_notes.get(ev.value):
                details.append(f"NoteOn({ev.value}) while sounding")
                for start in open_notes.pop(ev.value):
                    close(ev.value, start, clock)
            open_notes.setdefault(ev.value, []).append(clock)
        elif ev.kind == "off":
            stack = open_notes.get(ev.value)
            if not stack:
                details.append(f"NoteOff({ev.value}) with nothing open")
                continue
            close(ev.value, stack.pop(0), clock)
            if not stack:
                del open_notes[ev.value]
        elif ev.kind == "off_all":
            if not open_notes:
                details.append("NoteOff(All) with nothing open")
                continue
            for pitch in sorted(open_notes):
                for start in open_notes[pitch]:
                    close(pitch, start, clock)
            open_notes.clear()

    if not terminated:
        details.append("missing EOS")
    for pitch in sorted(open_notes):
        for start in open_notes[pitch]:
            details.append(f"note {pitch} left open")
            close(pitch, start, limit)

    notes = tuple(Note(p, grid(a), grid(b)) for p, a, b in done)
    seg = Segment(NoteList(notes, time_signature), bars, beats_per_bar)
    return DecodeResult(seg, len(details), details)


# vocabulary

class TokenVocab:
    """Stable bijection between events and integer ids (layout in the module docstring)."""

    PAD_ID = 0
    BOS_ID = 1
    EOS_ID = 2
    NOTE_ON_BASE = 3
    NOTE_OFF_BASE = 131
    NOTE_OFF_ALL_ID = 259
    SHIFT_BASE = 259  # TimeShift(d) -> 259 + d
    SIZE = 284

    def __len__(self):
        return self.SIZE

    def to_id(self, ev: Event) -> int:
        if ev.kind == "pad":
            return self.PAD_ID
        if ev.kind == "bos":
            return self.BOS_ID
        if ev.kind == "eos":
            return self.EOS_ID
        if ev.kind == "on" and 0 <= ev.value <= 127:
            return self.NOTE_ON_BASE + ev.value
        if ev.kind == "off" and 0 <= ev.value <= 127:
            return self.NOTE_OFF_BASE + ev.value
        if ev.kind == "off_all":
            return self.NOTE_OFF_ALL_ID
        if ev.kind == "shift" and 1 <= ev.value <= MAX_SHIFT:
            return self.SHIFT_BASE + ev.value
        raise ValueError(f"no id for event {ev}")

    def to_event(self, idx: int) -> Event:
        idx = int(idx)
        if not 0 <= idx < self.SIZE:
            raise ValueError(f"unknown token id {idx}")
        if idx == self.PAD_ID:
            return PAD
        if idx == self.BOS_ID:
            return BOS
        if idx == self.EOS_ID:
            return EOS
        if idx < self.NOTE_OFF_BASE:
            return Event("on", idx - self.NOTE_ON_BASE)
        if idx < self.NOTE_OFF_ALL_ID:
            return Event("off", idx - self.NOTE_OFF_BASE)
        if idx == self.NOTE_OFF_ALL_ID:
            return NOTE_OFF_ALL
        return Event("shift", idx - self.SHIFT_BASE)

    def tokens(self) -> list[str]:
        return [str(self.to_event(i)) for i in range(self.SIZE)]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens()).encode("utf-8")).hexdigest()[:16]


VOCAB = TokenVocab()


def tokenize(events: Iterable[Event]) -> list[int]:
    return [VOCAB.to_id(e) for e in events]


def detokenize(ids: Iterable[int]) -> list[Event]:
    return [VOCAB.to_event(i) for i in ids]
