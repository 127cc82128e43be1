"""Objective evaluation: chroma content preservation and style-profile style fit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform

from .codec import Segment
from .notes import Note, NoteList
from .numeric import Rng

CHROMA_FRAMES_PER_BEAT = 12
SMOOTH_WINDOW = 24
SMOOTH_STRIDE = 12

PROFILE_BEATS = 4
PROFILE_BINS_PER_BEAT = 6
PROFILE_MAX_INTERVAL = 20
PROFILE_TIME_BINS = PROFILE_BEATS * PROFILE_BINS_PER_BEAT  # 24
PROFILE_INTERVAL_BINS = 2 * PROFILE_MAX_INTERVAL + 1  # 41
PROFILE_SIZE = PROFILE_TIME_BINS * PROFILE_INTERVAL_BINS  # 984

_EPS = 1e-9


# content preservation

def raw_chroma(seg: Segment) -> np.ndarray:
    """(frames, 12) counts of sounding notes per pitch class, 12 frames per beat."""
    frames = seg.length * CHROMA_FRAMES_PER_BEAT
    out = np.zeros((frames, 12), dtype=np.float64)
    for n in seg:
        # frame f covers [f/12, (f+1)/12); the note sounds in it if the spans overlap
        first = max(int(math.floor(n.onset * CHROMA_FRAMES_PER_BEAT + _EPS)), 0)
        last = min(int(math.ceil(n.offset * CHROMA_FRAMES_PER_BEAT - _EPS)), frames)
        out[first:last, n.pitch % 12] += 1.0
    return out


def chroma(seg: Segment) -> np.ndarray:
    """Smoothed chroma: 2-beat averaging windows at a 1-beat stride, windows fully inside."""
    raw = raw_chroma(seg)
    count = (len(raw) - SMOOTH_WINDOW) // SMOOTH_STRIDE + 1
    csum = np.vstack([np.zeros((1, 12)), np.cumsum(raw, axis=0)])
    starts = np.arange(count) * SMOOTH_STRIDE
    return (csum[starts + SMOOTH_WINDOW] - csum[starts]) / SMOOTH_WINDOW


def _framewise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    za, zb = na < _EPS, nb < _EPS
    cos = np.zeros(len(a))
    ok = ~za & ~zb
    cos[ok] = (a[ok] * b[ok]).sum(axis=1) / (na[ok] * nb[ok])
    cos[za & zb] = 1.0
    return cos


def content_preservation(out: Segment, source: Segment) -> float:
    """Mean frame-wise cosine similarity of smoothed chroma.

    A frame silent in exactly one segment scores 0; silent in both, 1.
    """
    if out.length != source.length:
        raise ValueError(f"segment lengths differ: {out.length} vs {source.length} beats")
    return float(_framewise_cosine(chroma(out), chroma(source)).mean())


# style profile

def _track_histogram(notes: Iterable[Note]) -> np.ndarray:
    hist = np.zeros(PROFILE_SIZE, dtype=np.float64)
    notes = list(notes)
    if len(notes) < 2:
        return hist
    t = np.array([n.onset for n in notes], dtype=np.float64)
    p = np.array([n.pitch for n in notes], dtype=np.int64)
    dt = t[None, :] - t[:, None]  # [a, b] = t_b - t_a
    dp = p[None, :] - p[:, None]
    ok = (dt > -_EPS) & (dt < PROFILE_BEATS - _EPS) & (np.abs(dp) <= PROFILE_MAX_INTERVAL)
    np.fill_diagonal(ok, False)
    tbin = np.floor(np.maximum(dt[ok], 0.0) * PROFILE_BINS_PER_BEAT + _EPS).astype(np.int64)
    ibin = dp[ok] + PROFILE_MAX_INTERVAL
    np.add.at(hist, tbin * PROFILE_INTERVAL_BINS + ibin, 1.0)
    return hist


def profile_counts(tracks: Iterable[NoteList | Segment]) -> np.ndarray:
    """Unnormalised pair histogram; pairs never cross track boundaries."""
    hist = np.zeros(PROFILE_SIZE, dtype=np.float64)
    for tr in tracks:
        hist += _track_histogram(tr)
    return hist


def normalize(hist: np.ndarray) -> np.ndarray:
    s = hist.sum()
    return hist / s if s > 0 else np.zeros_like(hist)


def style_profile(tracks: Iterable[NoteList | Segment]) -> np.ndarray:
    """984-dim L1-normalised histogram of (onset difference, interval) pairs.

    Bin layout: time bin (6 per beat, 24 total) major, interval bin
    (-20..+20 semitones) minor.
    """
    return normalize(profile_counts(tracks))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _EPS or nb < _EPS:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class StyleFit:
    value: float
    flagged: bool = False


def style_fit_macro(outputs: Sequence[NoteList | Segment], reference: np.ndarray) -> StyleFit:
    """Cosine similarity between the pooled profile of all outputs and the reference."""
    prof = style_profile(outputs)
    if not prof.any():
        return StyleFit(0.0, True)
    return StyleFit(cosine(prof, reference))


@dataclass
class SongStyleFit:
    mean: float
    std: float
    per_song: dict[str, float] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)


def style_fit_song(outputs_by_song: Mapping[str, Sequence[NoteList | Segment]],
                   reference: np.ndarray) -> SongStyleFit:
    per_song, flagged = {}, []
    for song, segs in outputs_by_song.items():
        prof = style_profile(segs)
        if not prof.any():
            flagged.append(song)
            per_song[song] = 0.0
        else:
            per_song[song] = cosine(prof, reference)
    vals = np.array(list(per_song.values()), dtype=np.float64)
    if len(vals) == 0:
        return SongStyleFit(0.0, 0.0, per_song, flagged)
    return SongStyleFit(float(vals.mean()), float(vals.std()), per_song, flagged)


def reference_profiles(corpus, tracks: Sequence[str] = ("bass", "piano"),
                       split: str = "train") -> dict[tuple[str, str], np.ndarray]:
    """Per (style, track) profile pooled over every segment of the given split.

    Each (song, style, render) segment is counted once, however many examples
    reference it.
    """
    seen = set()
    counts: dict[tuple[str, str], np.ndarray] = {}
    for ex in corpus.split(split):
        key = (ex.song_id, ex.target_style, ex.render_index, ex.segment_index)
        if key in seen:
            continue
        seen.add(key)
        for track in tracks:
            seg = corpus.target(ex, track)
            counts.setdefault((ex.target_style, track), np.zeros(PROFILE_SIZE))
            counts[(ex.target_style, track)] += profile_counts([seg])
    return {k: normalize(v) for k, v in sorted(counts.items())}


def randomized_baseline(n: int, rng: Rng) -> list[int]:
    """A random permutation of range(n) with no fixed points when n >= 2.

    Draws uniformly until a derangement comes up (expected ~e tries); falls
    back to a cyclic shift of the last draw after 100 attempts.
    """
    if n < 2:
        return list(range(n))
    for _ in range(100):
        perm = [int(i) for i in rng.permutation(n)]
        if all(i != p for i, p in enumerate(perm)):
            return perm
    return perm[1:] + perm[:1]


# clustering

@dataclass
class SimilarityMatrix:
    names: list[str]
    matrix: np.ndarray
    order: list[int]

    @property
    def ordered_names(self) -> list[str]:
        return [self.names[i] for i in self.order]


def profile_similarity_matrix(profiles: Mapping[str, np.ndarray]) -> SimilarityMatrix:
    """Pairwise cosine similarities and an average-linkage leaf order on 1 - cos."""
    names = list(profiles)
    if len(names) < 2:
        raise ValueError("need at least two profiles")
    vecs = [np.asarray(profiles[n], dtype=np.float64) for n in names]
    k = len(vecs)
    sim = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            sim[i, j] = sim[j, i] = cosine(vecs[i], vecs[j])
    dist = np.clip(1.0 - sim, 0.0, None)
    np.fill_diagonal(dist, 0.0)
    tree = linkage(squareform(dist, checks=False), method="average")
    return SimilarityMatrix(names, sim, [int(i) for i in leaves_list(tree)])
