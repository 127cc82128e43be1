"""Pattern-based accompaniment arranger and aligned-pair corpus builder.

A style is a set of per-role rhythm/degree patterns on a grid of 12ths of a
beat. Rendering tiles a pattern over the chart and resolves each event's
chord-tone selector against the chord sounding at the event onset. Styles with
a swing feel push every off-beat eighth (6/12 of a beat) to 8/12.

Rendering the same chart in several styles gives musically aligned tracks;
every ordered pair of styles of one song segment is a training example.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .chart import ChordChart, ChordSymbol, QUALITIES, chord_pitch_classes
from .codec import Segment, segment
from .notes import BEATS_PER_BAR, Note, NoteList, grid
from .numeric import Rng

log = logging.getLogger(__name__)

DEGREES = ("root", "third", "fifth", "seventh", "bass-octave", "full-chord", "approach")
FEELS = ("even", "swing")
BAR_TWELFTHS = BEATS_PER_BAR * 12
MODEL_ROLES = ("bass", "piano")


class StyleError(ValueError):
    pass


@dataclass(frozen=True)
class PatternEvent:
    onset: int  # 12ths of a beat from the pattern start
    duration: int  # 12ths of a beat
    degree: str
    octave: int


@dataclass(frozen=True)
class Pattern:
    length: int  # bars
    events: tuple[PatternEvent, ...]

    def __post_init__(self):
        if self.length not in (1, 2):
            raise StyleError(f"pattern length must be 1 or 2 bars, got {self.length}")
        for ev in self.events:
            if not 0 <= ev.onset < self.length * BAR_TWELFTHS:
                raise StyleError(f"event onset {ev.onset} outside the pattern")
            if ev.duration <= 0:
                raise StyleError("event duration must be positive")
            if ev.degree not in DEGREES:
                raise StyleError(f"unknown degree {ev.degree!r}")


@dataclass(frozen=True)
class Variant:
    pattern: Pattern
    probability: float


@dataclass(frozen=True)
class StyleSpec:
    """A named arrangement style.

    ``tracks`` maps a role to its pattern variants; the first variant is the
    style's main pattern and one variant is drawn per pattern cycle.
    """

    name: str
    feel: str
    tracks: dict[str, tuple[Variant, ...]]
    family: str = ""

    def __post_init__(self):
        if self.feel not in FEELS:
            raise StyleError(f"{self.name}: unknown feel {self.feel!r}")
        for role in MODEL_ROLES:
            if role not in self.tracks:
                raise StyleError(f"{self.name}: missing {role} pattern")
        for role, variants in self.tracks.items():
            if not variants:
                raise StyleError(f"{self.name}/{role}: no patterns")
            if abs(sum(v.probability for v in variants) - 1.0) > 1e-9:
                raise StyleError(f"{self.name}/{role}: variant probabilities must sum to 1")

    @property
    def patterns(self) -> dict[str, Pattern]:
        return {role: variants[0].pattern for role, variants in self.tracks.items()}

    @property
    def roles(self) -> list[str]:
        return list(self.tracks)


# style files

def style_from_dict(d: dict) -> StyleSpec:
    try:
        tracks = {}
        for role, variants in d["tracks"].items():
            tracks[role] = tuple(
                Variant(Pattern(int(v.get("bars", 1)),
                                tuple(PatternEvent(int(e[0]), int(e[1]), str(e[2]), int(e[3]))
                                      for e in v["events"])),
                        float(v.get("probability", 1.0)))
                for v in variants)
        return StyleSpec(d["name"], d.get("feel", "even"), tracks, d.get("family", ""))
    except (KeyError, TypeError, IndexError) as exc:
        raise StyleError(f"malformed style description: {exc}") from None


def style_to_dict(style: StyleSpec) -> dict:
    return {
        "name": style.name,
        "family": style.family,
        "feel": style.feel,
        "tracks": {
            role: [{"probability": v.probability, "bars": v.pattern.length,
                    "events": [[e.onset, e.duration, e.degree, e.octave] for e in v.pattern.events]}
                   for v in variants]
            for role, variants in style.tracks.items()
        },
    }


def load_style(path: str | Path) -> StyleSpec:
    return style_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def builtin_styles() -> list[StyleSpec]:
    """The bundled styles, sorted by family then name."""
    files = resources.files("stylox") / "styles"
    styles = [style_from_dict(json.loads(f.read_text(encoding="utf-8")))
              for f in files.iterdir() if f.name.endswith(".json")]
    return sorted(styles, key=lambda s: (s.family, s.name))


def style_registry(styles: Sequence[StyleSpec]) -> dict[str, StyleSpec]:
    reg = {}
    for s in styles:
        if s.name in reg:
            raise StyleError(f"duplicate style name {s.name!r}")
        reg[s.name] = s
    return reg


# rendering

def _third(c: ChordSymbol) -> int:
    q = QUALITIES[c.quality]
    for i in (4, 3, 5):
        if i in q:
            return i
    return 4


def _fifth(c: ChordSymbol) -> int:
    q = QUALITIES[c.quality]
    for i in (7, 6, 8):
        if i in q:
            return i
    return 7


def _seventh(c: ChordSymbol) -> int:
    q = QUALITIES[c.quality]
    for i in (10, 11):
        if i in q:
            return i
    return 12


def resolve_degree(degree: str, octave: int, chord: ChordSymbol,
                   next_chord: ChordSymbol) -> list[int]:
    """MIDI pitches for one pattern event. Octave o places C at 12*(o+1)."""
    base = 12 * (octave + 1)
    root = base + chord.root
    if degree == "root":
        pitches = [root]
    elif degree == "third":
        pitches = [root + _third(chord)]
    elif degree == "fifth":
        pitches = [root + _fifth(chord)]
    elif degree == "seventh":
        pitches = [root + _seventh(chord)]
    elif degree == "bass-octave":
        pitches = [base + chord.bass_pc + 12]
    elif degree == "full-chord":
        pitches = sorted(base + (pc - base) % 12 for pc in chord_pitch_classes(chord))
    elif degree == "approach":
        pitches = [base + next_chord.root - 1]
    else:
        raise StyleError(f"unknown degree {degree!r}")
    out = []
    for p in pitches:
        while p > 127:
            p -= 12
        while p < 0:
            p += 12
        out.append(p)
    return out


def swing(t: int) -> int:
    """Delay the off-beat eighth of every beat from 6/12 to 8/12."""
    beat, pos = divmod(t, 12)
    return beat * 12 + 8 if pos == 6 else t


def render(chart: ChordChart, style: StyleSpec, role: str, rng_seed: int) -> NoteList:
    if role not in style.tracks:
        raise StyleError(f"style {style.name!r} has no {role} pattern")
    variants = style.tracks[role]
    rng = Rng(rng_seed).child(f"{style.name}/{role}")
    probs = [v.probability for v in variants]

    changes = [(int(a * 12), int(b * 12), c) for a, b, c in chart.timeline()]
    bar_first = [bar[0][0] for bar in chart.bars]
    total = chart.total_beats * 12
    nbars = len(chart.bars)

    def chord_at(t: int) -> ChordSymbol:
        for a, b, c in changes:
            if a <= t < b:
                return c
        return changes[-1][2]

    notes = []
    bar = 0
    while bar < nbars:
        pattern = variants[rng.categorical(probs) if len(variants) > 1 else 0].pattern
        start = bar * BAR_TWELFTHS
        for ev in pattern.events:
            on = start + ev.onset
            if on >= total:
                continue
            off = min(on + ev.duration, total)
            ev_bar = on // BAR_TWELFTHS
            chord = chord_at(on)
            nxt = bar_first[ev_bar + 1] if ev_bar + 1 < nbars else chord
            if style.feel == "swing":
                on, off = swing(on), max(swing(off), swing(on) + 1)
            for p in resolve_degree(ev.degree, ev.octave, chord, nxt):
                notes.append(Note(p, grid(on), grid(off)))
        bar += pattern.length
    return NoteList(tuple(notes), chart.time_signature)


def render_song(chart: ChordChart, style: StyleSpec, rng_seed: int) -> dict[str, NoteList]:
    return {role: render(chart, style, role, rng_seed) for role in style.roles}


# corpus

SPLITS = ("train", "validation", "test")


def select_tracks(tracks: dict[str, NoteList], selector: str) -> NoteList:
    """bass / piano / all (every non-drum role merged)."""
    if selector == "all":
        lists = [nl for role, nl in tracks.items() if role != "drums"]
    else:
        lists = [tracks[selector]] if selector in tracks else []
    ts = next(iter(tracks.values())).time_signature if tracks else "4/4"
    return NoteList.merge(lists, ts)


@dataclass
class Rendering:
    song_id: str
    style: str
    render_index: int
    tracks: dict[str, NoteList]
    total_beats: int
    _segments: dict[str, list[Segment]] = field(default_factory=dict, repr=False)

    def segments(self, selector: str) -> list[Segment]:
        if selector not in self._segments:
            self._segments[selector] = segment(select_tracks(self.tracks, selector), self.total_beats)
        return self._segments[selector]


@dataclass(frozen=True)
class PairExample:
    song_id: str
    segment_index: int
    source_style: str
    target_style: str
    render_index: int = 0


@dataclass
class PairedCorpus:
    examples: list[PairExample]
    renderings: dict[tuple[str, str, int], Rendering]
    splits: dict[str, str]  # song_id -> split
    styles: list[str]
    warnings: list[str] = field(default_factory=list)
    feels: dict[str, str] = field(default_factory=dict)
    families: dict[str, str] = field(default_factory=dict)

    def rendering(self, song_id: str, style: str, render_index: int = 0) -> Rendering:
        return self.renderings[(song_id, style, render_index)]

    def source(self, ex: PairExample, selector: str) -> Segment:
        return self.rendering(ex.song_id, ex.source_style, ex.render_index).segments(selector)[ex.segment_index]

    def target(self, ex: PairExample, selector: str) -> Segment:
        return self.rendering(ex.song_id, ex.target_style, ex.render_index).segments(selector)[ex.segment_index]

    def split(self, name: str) -> list[PairExample]:
        return [ex for ex in self.examples if self.splits[ex.song_id] == name]

    def songs(self, name: str | None = None) -> list[str]:
        seen = dict.fromkeys(ex.song_id for ex in self.examples)
        return [s for s in seen if name is None or self.splits[s] == name]


def _split_songs(song_ids: list[str], n_validation: int, n_test: int, rng: Rng) -> dict[str, str]:
    order = [song_ids[i] for i in rng.permutation(len(song_ids))]
    out = {}
    for i, sid in enumerate(order):
        if i < n_test:
            out[sid] = "test"
        elif i < n_test + n_validation:
            out[sid] = "validation"
        else:
            out[sid] = "train"
    return out


def build_corpus(charts: Sequence[tuple[str, ChordChart]], styles: Sequence[StyleSpec],
                 k_styles_per_song: int = 3, renders_per_style: int = 1, seed: int = 0,
                 n_validation: int = 0, n_test: int = 0,
                 directions: Iterable[tuple[str, str]] | None = None,
                 required_roles: Sequence[str] = MODEL_ROLES) -> PairedCorpus:
    """Render every chart in ``k`` sampled styles and pair up aligned segments.

    Each render index r pairs renders r of the sampled styles, giving
    ``renders * k * (k - 1)`` examples per segment. ``directions`` restricts
    the kept (source, target) style pairs. Segments in which any rendering has
    an empty ``required_roles`` track are skipped.
    """
    if len(styles) < k_styles_per_song:
        raise StyleError(f"need at least {k_styles_per_song} styles, have {len(styles)}")
    reg = style_registry(styles)
    names = [s.name for s in styles]
    keep = None if directions is None else set(directions)
    root = Rng(seed)
    renderings: dict[tuple[str, str, int], Rendering] = {}
    examples: list[PairExample] = []
    warnings: list[str] = []

    for song_id, chart in charts:
        picks = root.child(f"styles/{song_id}").choice(len(names), k_styles_per_song, replace=False)
        chosen = [names[i] for i in picks]
        for r in range(renders_per_style):
            rends = []
            for style in chosen:
                rseed = int(root.child(f"render/{song_id}/{style}/{r}").integers(0, 2**31 - 1))
                rend = Rendering(song_id, style, r, render_song(chart, reg[style], rseed),
                                 chart.total_beats)
                renderings[(song_id, style, r)] = rend
                rends.append(rend)
            if len(rends) < 2:
                continue
            nseg = len(rends[0].segments(required_roles[0]))
            for idx in range(nseg):
                if any(not rend.segments(role)[idx].notes for rend in rends for role in required_roles):
                    msg = f"{song_id}: segment {idx} (render {r}) has an empty track; skipped"
                    log.warning(msg)
                    warnings.append(msg)
                    continue
                for a in chosen:
                    for b in chosen:
                        if a != b and (keep is None or (a, b) in keep):
                            examples.append(PairExample(song_id, idx, a, b, r))

    song_ids = [sid for sid, _ in charts]
    splits = _split_songs(song_ids, n_validation, n_test, root.child("split"))
    return PairedCorpus(examples, renderings, splits, names, warnings,
                        {s.name: s.feel for s in styles}, {s.name: s.family for s in styles})
