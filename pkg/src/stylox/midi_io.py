"""Standard MIDI File reading and writing on top of the beat-based note model.

Only what the pipeline needs is supported: note events, program changes,
track names, tempo and time-signature meta events. Times are converted to
beats; in 12/8 a beat is a dotted quarter, so bars always hold 4 beats.
"""

from __future__ import annotations

import struct
from collections import deque
from pathlib import Path

from .notes import Note, NoteList, ROLES, Song, Track

TICKS_PER_QUARTER = 480
VELOCITY = 100
TEMPO_US_PER_QUARTER = 500_000  # 120 BPM
DRUM_CHANNEL = 9

DEFAULT_PROGRAMS = {"bass": 33, "piano": 0, "guitar": 25, "strings": 48, "other": 80, "drums": 0}
# quarter notes per beat
_BEAT_QUARTERS = {"4/4": 1.0, "12/8": 1.5}
_TIME_SIG_BYTES = {"4/4": (4, 2, 24, 8), "12/8": (12, 3, 36, 8)}


class MidiFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedTimeSignature(ValueError):
    pass


def role_for_program(program: int) -> str:
    if 32 <= program <= 39:
        return "bass"
    if 0 <= program <= 7 or 16 <= program <= 23:
        return "piano"
    if 24 <= program <= 31:
        return "guitar"
    if 40 <= program <= 55:
        return "strings"
    return "other"


# reading

class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def need(self, n: int, what: str):
        if self.pos + n > self.end:
            raise MidiFormatError(f"truncated {what}", self.pos)

    def byte(self, what: str = "data") -> int:
        self.need(1, what)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int, what: str = "data") -> bytes:
        self.need(n, what)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def varlen(self) -> int:
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.byte("variable-length quantity")
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiFormatError("variable-length quantity longer than 4 bytes", start)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, start: int, end: int, index: int, warnings: list[str]):
    """Returns (name, per-channel note tuples in ticks, per-channel program, time signatures)."""
    rd = _Reader(data, start, end)
    tick = 0
    status = None
    name = ""
    programs: dict[int, int] = {}
    pending: dict[tuple[int, int], deque[int]] = {}
    notes: dict[int, list[tuple[int, int, int]]] = {}
    time_sigs: list[tuple[str, int]] = []
    while rd.pos < rd.end:
        tick += rd.varlen()
        ev_pos = rd.pos
        b = rd.byte("event")
        if b == 0xFF:
            kind = rd.byte("meta type")
            length = rd.varlen()
            payload = rd.take(length, "meta event")
            if kind == 0x2F:
                break
            if kind == 0x03 and not name:
                name = payload.decode("latin-1")
            elif kind == 0x58:
                if length < 2:
                    raise MidiFormatError("short time-signature event", ev_pos)
                time_sigs.append((f"{payload[0]}/{2 ** payload[1]}", ev_pos))
            continue
        if b in (0xF0, 0xF7):
            rd.take(rd.varlen(), "sysex event")
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise MidiFormatError(f"unexpected system message 0x{b:02X}", ev_pos)
            status = b
            first = rd.byte("channel event")
        else:
            if status is None:
                raise MidiFormatError("running status without a previous status byte", ev_pos)
            first = b
        kind, channel = status & 0xF0, status & 0x0F
        rest = rd.take(_DATA_LEN[kind] - 1, "channel event")
        if kind == 0xC0:
            programs.setdefault(channel, first)
        elif kind in (0x80, 0x90):
            pitch, velocity = first & 0x7F, rest[0]
            key = (channel, pitch)
            if kind == 0x90 and velocity > 0:
                pending.setdefault(key, deque()).append(tick)
            else:
                queue = pending.get(key)
                if not queue:
                    warnings.append(f"track {index}: note-off for {pitch} without note-on at tick {tick}")
                    continue
                on = queue.popleft()
                if tick > on:
                    notes.setdefault(channel, []).append((pitch, on, tick))
                else:
                    warnings.append(f"track {index}: zero-length note {pitch} at tick {tick} dropped")
    for (channel, pitch), queue in sorted(pending.items()):
        for on in queue:
            warnings.append(f"track {index}: dangling note-on {pitch} at tick {on} closed at end of track")
            if tick > on:
                notes.setdefault(channel, []).append((pitch, on, tick))
    return name, notes, programs, time_sigs


def read_midi(source: bytes | str | Path) -> Song:
    data = bytes(source) if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    rd = _Reader(data)
    if rd.take(4, "header") != b"MThd":
        raise MidiFormatError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", rd.take(4, "header"))
    if hlen < 6:
        raise MidiFormatError("header chunk too short", 4)
    fmt, ntracks, division = struct.unpack(">HHH", rd.take(6, "header"))
    rd.pos = 8 + hlen
    if fmt not in (0, 1):
        raise MidiFormatError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000 or division == 0:
        raise MidiFormatError("SMPTE or zero time division not supported", 12)

    warnings: list[str] = []
    parsed = []
    time_sigs: list[tuple[str, int]] = []
    while rd.pos < len(data) and len(parsed) < ntracks:
        chunk_pos = rd.pos
        kind = rd.take(4, "chunk header")
        (length,) = struct.unpack(">I", rd.take(4, "chunk header"))
        if rd.pos + length > len(data):
            raise MidiFormatError(f"chunk {kind!r} overruns end of file", chunk_pos)
        if kind == b"MTrk":
            name, notes, programs, sigs = _parse_track(data, rd.pos, rd.pos + length, len(parsed), warnings)
            parsed.append((name, notes, programs))
            time_sigs.extend(sigs)
        rd.pos += length
    if len(parsed) < ntracks:
        warnings.append(f"header announces {ntracks} tracks, found {len(parsed)}")

    found = {sig for sig, _ in time_sigs}
    for sig, pos in time_sigs:
        if sig not in _BEAT_QUARTERS:
            raise UnsupportedTimeSignature(f"unsupported time signature {sig} (byte offset {pos})")
    if len(found) > 1:
        raise UnsupportedTimeSignature(f"unsupported time signature change {sorted(found)}")
    ts = found.pop() if found else "4/4"
    ticks_per_beat = division * _BEAT_QUARTERS[ts]

    tracks = []
    for name, notes, programs in parsed:
        for channel in sorted(notes):
            program = programs.get(channel, 0)
            role = "drums" if channel == DRUM_CHANNEL else role_for_program(program)
            nl = NoteList(tuple(Note(p, a / ticks_per_beat, b / ticks_per_beat)
                                for p, a, b in notes[channel]), ts)
            tracks.append(Track(role, nl, program, name))
    return Song(tracks, ts, 4, warnings)


# writing

def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _chunk(events: list[tuple[int, bytes]]) -> bytes:
    body = bytearray()
    last = 0
    for tick, payload in events:
        body += _varlen(tick - last) + payload
        last = tick
    body += _varlen(0) + b"\xFF\x2F\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_midi(song: Song, path: str | Path | None = None) -> bytes:
    """Encode a song as a type-1 SMF at 480 ticks per quarter, 120 BPM, velocity 100."""
    ts = song.time_signature
    ticks_per_beat = TICKS_PER_QUARTER * _BEAT_QUARTERS[ts]
    conductor = [
        (0, b"\xFF\x51\x03" + TEMPO_US_PER_QUARTER.to_bytes(3, "big")),
        (0, b"\xFF\x58\x04" + bytes(_TIME_SIG_BYTES[ts])),
    ]
    chunks = [_chunk(conductor)]
    free_channels = [c for c in range(16) if c != DRUM_CHANNEL]
    for i, track in enumerate(song.tracks):
        channel = DRUM_CHANNEL if track.role == "drums" else free_channels[i % len(free_channels)]
        label = (track.name or track.role).encode("latin-1", "replace")
        events = [(0, b"\xFF\x03" + _varlen(len(label)) + label),
                  (0, bytes([0xC0 | channel, track.program & 0x7F]))]
        timed = []
        for n in track.notes:
            on = int(round(n.onset * ticks_per_beat))
            off = max(int(round(n.offset * ticks_per_beat)), on + 1)
            timed.append((on, 1, n.pitch, bytes([0x90 | channel, n.pitch, VELOCITY])))
            timed.append((off, 0, n.pitch, bytes([0x80 | channel, n.pitch, 0])))
        timed.sort(key=lambda e: e[:3])
        events.extend((t, payload) for t, _, _, payload in timed)
        chunks.append(_chunk(events))
    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), TICKS_PER_QUARTER)
    blob = header + b"".join(chunks)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def song_from_roles(tracks: dict[str, NoteList], time_signature: str = "4/4") -> Song:
    """Build a song with one track per role, using the default GM program for each."""
    out = []
    for role in sorted(tracks, key=lambda r: ROLES.index(r) if r in ROLES else len(ROLES)):
        out.append(Track(role, tracks[role], DEFAULT_PROGRAMS.get(role, 80), role))
    return Song(out, time_signature)


def extract_track(song: Song, selector: str) -> NoteList:
    """bass / piano / all (every non-drum track), merged and sorted."""
    if selector not in ("bass", "piano", "all"):
        raise ValueError(f"unknown track selector {selector!r}")
    picked = [t.notes for t in song.tracks
              if (t.role != "drums" if selector == "all" else t.role == selector)]
    return NoteList.merge(picked, song.time_signature)
