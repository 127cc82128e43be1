from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylox.arranger import (DEGREES, Pattern, PatternEvent, StyleError, StyleSpec, Variant, build_corpus,
                             builtin_styles, load_style, render, render_song, resolve_degree, style_from_dict,
                             style_to_dict, swing)
from stylox.chart import ChordSymbol, chord_pitch_classes, generate_charts, parse_chart
from stylox.codec import decode_events, encode_events, quantize, segment
from stylox.metrics import cosine, style_profile
from stylox.notes import Note


def simple_style(name="s", feel="even", bass_events=((0, 24, "root", 3), (24, 24, "fifth", 3))):
    bass = Pattern(1, tuple(PatternEvent(*e) for e in bass_events))
    piano = Pattern(1, (PatternEvent(0, 48, "full-chord", 4),))
    return StyleSpec(name, feel, {"bass": (Variant(bass, 1.0),), "piano": (Variant(piano, 1.0),)})


class TestRender:
    def test_root_and_fifth(self):
        notes = list(render(parse_chart("| C |"), simple_style(), "bass", 0))
        assert notes == [Note(48, 0.0, 2.0), Note(55, 2.0, 4.0)]

    def test_deterministic(self):
        chart = parse_chart("| C | Am | F | G7 |")
        for style in builtin_styles():
            assert render_song(chart, style, 11) == render_song(chart, style, 11)

    def test_swing_delays_offbeat_eighth(self):
        style = simple_style(feel="swing", bass_events=((0, 6, "root", 3), (6, 6, "root", 3)))
        notes = list(render(parse_chart("| C |"), style, "bass", 0))
        assert [n.onset for n in notes] == [0.0, 8 / 12]
        assert swing(6) == 8 and swing(18) == 20 and swing(7) == 7 and swing(12) == 12

    def test_swing_keeps_short_notes_positive(self):
        style = simple_style(feel="swing", bass_events=((5, 1, "root", 3),))
        notes = list(render(parse_chart("| C |"), style, "bass", 0))
        assert all(n.offset > n.onset for n in notes)

    def test_missing_role(self):
        with pytest.raises(StyleError):
            render(parse_chart("| C |"), simple_style(), "guitar", 0)

    def test_every_builtin_renders_two_bars(self):
        chart = parse_chart("| C | F |")
        for style in builtin_styles():
            tracks = render_song(chart, style, 0)
            assert len(tracks["bass"]) and len(tracks["piano"])

    def test_pattern_tiles_across_bars(self):
        notes = list(render(parse_chart("| C | F |"), simple_style(), "bass", 0))
        assert [n.pitch for n in notes] == [48, 55, 53, 60]


class TestDegrees:
    def test_table(self):
        c7, f = ChordSymbol(0, "7"), ChordSymbol(5, "maj")
        assert resolve_degree("root", 3, c7, f) == [48]
        assert resolve_degree("third", 3, c7, f) == [52]
        assert resolve_degree("fifth", 3, c7, f) == [55]
        assert resolve_degree("seventh", 3, c7, f) == [58]
        assert resolve_degree("bass-octave", 3, c7, f) == [60]
        assert resolve_degree("full-chord", 3, c7, f) == [48, 52, 55, 58]
        assert resolve_degree("approach", 3, c7, f) == [52]

    def test_minor_and_diminished(self):
        nxt = ChordSymbol(0)
        assert resolve_degree("third", 3, ChordSymbol(9, "min"), nxt) == [60]
        assert resolve_degree("fifth", 3, ChordSymbol(11, "dim"), nxt) == [65]
        assert resolve_degree("bass-octave", 2, ChordSymbol(0, "maj", 4), nxt) == [52]

    def test_pitch_clamped_to_midi_range(self):
        assert resolve_degree("root", 10, ChordSymbol(11), ChordSymbol(0)) == [119]


class TestHarmonicInvariant:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 7))
    def test_pitch_classes_within_chords(self, seed, style_idx):
        (_, chart), = generate_charts(1, seed)
        style = builtin_styles()[style_idx]
        timeline = [(float(a), float(b), c) for a, b, c in chart.timeline()]
        bar_roots = {i: bar[0][0].root for i, bar in enumerate(chart.bars)}
        for role, notes in render_song(chart, style, seed).items():
            for n in notes:
                # swing moves onsets by at most 2/12 of a beat and never across a beat
                t = int(n.onset) + (0.5 if abs(n.onset % 1 - 8 / 12) < 1e-9 and style.feel == "swing" else n.onset % 1)
                chord = next(c for a, b, c in timeline if a <= t < b)
                ok = chord_pitch_classes(chord) | {chord.bass_pc}
                nxt = bar_roots.get(int(t // 4) + 1, chord.root)
                ok |= {(nxt - 1) % 12}
                assert n.pitch % 12 in ok, (style.name, role, n, chord)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 7))
    def test_codec_lossless_on_renders(self, seed, style_idx):
        (_, chart), = generate_charts(1, seed)
        style = builtin_styles()[style_idx]
        for role, notes in render_song(chart, style, seed).items():
            for seg in segment(notes, chart.total_beats):
                res = decode_events(encode_events(seg, compress_offs=role == "piano"))
                assert res.anomalies == 0
                assert res.segment == quantize(seg)
                # already on the grid up to float rounding from the segment shift
                assert all(abs(a.onset - b.onset) < 1e-9 and abs(a.offset - b.offset) < 1e-9
                           for a, b in zip(quantize(seg), seg))


class TestStyles:
    def test_builtin_set(self):
        styles = builtin_styles()
        assert len(styles) >= 8
        assert len({s.name for s in styles}) == len(styles)
        families: dict[str, set] = {}
        for s in styles:
            assert {"bass", "piano"} <= set(s.tracks)
            families.setdefault(s.family, set()).add(s.feel)
        assert all(len([x for x in styles if x.family == f]) >= 2 for f in families)
        assert all(len(feels) == 1 for feels in families.values())

    def test_within_family_more_similar(self):
        charts = generate_charts(12, 5)
        styles = builtin_styles()
        prof = {}
        for s in styles:
            tracks = [render(c, s, "bass", i) for i, (_, c) in enumerate(charts)]
            prof[s.name] = style_profile(tracks)
        fam = {s.name: s.family for s in styles}
        for a in prof:
            same = [cosine(prof[a], prof[b]) for b in prof if b != a and fam[b] == fam[a]]
            other = [cosine(prof[a], prof[b]) for b in prof if fam[b] != fam[a]]
            assert max(same) > max(other), a

    def test_dict_round_trip(self, tmp_path):
        for s in builtin_styles():
            p = tmp_path / f"{s.name}.json"
            p.write_text(json.dumps(style_to_dict(s)))
            assert load_style(p) == s

    def test_validation(self):
        with pytest.raises(StyleError, match="sum to 1"):
            bass = Pattern(1, (PatternEvent(0, 12, "root", 3),))
            StyleSpec("x", "even", {"bass": (Variant(bass, 0.5),), "piano": (Variant(bass, 1.0),)})
        with pytest.raises(StyleError, match="missing piano"):
            StyleSpec("x", "even", {"bass": (Variant(Pattern(1, ()), 1.0),)})
        with pytest.raises(StyleError, match="onset"):
            Pattern(1, (PatternEvent(48, 12, "root", 3),))
        with pytest.raises(StyleError, match="degree"):
            Pattern(1, (PatternEvent(0, 12, "ninth", 3),))
        with pytest.raises(StyleError, match="feel"):
            simple_style(feel="shuffle")
        with pytest.raises(StyleError, match="malformed"):
            style_from_dict({"name": "x"})

    def test_degrees_listed(self):
        assert set(DEGREES) == {"root", "third", "fifth", "seventh", "bass-octave", "full-chord", "approach"}


class TestCorpus:
    def _styles(self, n=3):
        return [simple_style(f"s{i}", bass_events=((0, 12 * (i + 1), "root", 3),)) for i in range(n)]

    def _chart(self, bars=8):
        return parse_chart("| " + " | ".join(["C", "F", "G7", "C"] * (bars // 4)) + " |")

    def test_six_pairs_per_segment(self):
        corpus = build_corpus([("a", self._chart(16))], self._styles(), 3)
        assert len(corpus.examples) == 2 * 6
        per_seg = {}
        for ex in corpus.examples:
            per_seg.setdefault(ex.segment_index, set()).add((ex.source_style, ex.target_style))
        assert all(len(v) == 6 for v in per_seg.values())

    def test_two_styles_two_renders(self):
        corpus = build_corpus([("a", self._chart())], self._styles(2), 2, renders_per_style=2)
        assert len(corpus.examples) == 4
        one_way = build_corpus([("a", self._chart())], self._styles(2), 2, renders_per_style=2,
                               directions=[("s0", "s1")])
        assert len(one_way.examples) == 2
        assert {ex.render_index for ex in one_way.examples} == {0, 1}

    def test_k_one_gives_nothing(self):
        assert build_corpus([("a", self._chart())], self._styles(), 1).examples == []

    def test_too_few_styles(self):
        with pytest.raises(StyleError):
            build_corpus([("a", self._chart())], self._styles(2), 3)

    def test_pairs_are_aligned(self):
        corpus = build_corpus(generate_charts(3, 0), builtin_styles(), 3, seed=2)
        for ex in corpus.examples[:30]:
            assert ex.source_style != ex.target_style
            assert corpus.source(ex, "bass").length == corpus.target(ex, "bass").length == 32

    def test_splits_disjoint_by_song(self):
        corpus = build_corpus(generate_charts(10, 0), builtin_styles(), 3, n_validation=2, n_test=3)
        by_split = {name: set(corpus.songs(name)) for name in ("train", "validation", "test")}
        assert [len(by_split[n]) for n in ("train", "validation", "test")] == [5, 2, 3]
        assert not (by_split["train"] & by_split["test"]) and not (by_split["train"] & by_split["validation"])
        for ex in corpus.split("test"):
            assert ex.song_id in by_split["test"]

    def test_empty_segment_skipped_with_warning(self):
        silent = simple_style("quiet", bass_events=())
        corpus = build_corpus([("a", self._chart())], [silent] + self._styles(2), 3)
        assert corpus.examples == [] and corpus.warnings

    def test_deterministic(self):
        a = build_corpus(generate_charts(4, 1), builtin_styles(), 3, seed=9)
        b = build_corpus(generate_charts(4, 1), builtin_styles(), 3, seed=9)
        assert a.examples == b.examples
        assert all(a.renderings[k].tracks == b.renderings[k].tracks for k in a.renderings)
