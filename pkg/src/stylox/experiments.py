"""Experiment plumbing behind the command line: configs, corpora on disk,
training runs, evaluation reports and the two comparison harnesses."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import metrics
from . import model as M
from .arranger import (PairedCorpus, PairExample, Rendering, StyleSpec, build_corpus, builtin_styles,
                       load_style, render_song, style_registry, style_to_dict, StyleError)
from .chart import ChartParseError, ChordChart, generate_charts, parse_chart
from .codec import Segment, concat_segments, segment
from .midi_io import extract_track, read_midi, song_from_roles, write_midi
from .notes import BEATS_PER_BAR, NoteList
from .numeric import Rng

log = logging.getLogger(__name__)

TRACK_PAIRS = (("bass", "bass"), ("piano", "piano"), ("all", "bass"), ("all", "piano"))


class ConfigError(ValueError):
    pass


# configuration

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "charts": {"type": "string"},
                "generate": {"type": "integer", "minimum": 1},
                "max_songs": {"type": "integer", "minimum": 1},
                "styles": {"oneOf": [{"type": "string"},
                                     {"type": "array", "items": {"type": "string"}, "minItems": 2}]},
                "k": {"type": "integer", "minimum": 1},
                "renders_per_style": {"type": "integer", "minimum": 1},
                "n_validation": {"type": "integer", "minimum": 0},
                "n_test": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "model": {"type": "object"},
        "train": {"type": "object"},
        "tracks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "input": {"enum": ["bass", "piano", "all"]},
                "output": {"enum": ["bass", "piano"]},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target_styles": {"oneOf": [{"const": "all"}, {"type": "array", "items": {"type": "string"}}]},
                "baselines": {"type": "boolean"},
                "batch_size": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class CorpusSpec:
    charts: str = "builtin"
    generate: int | None = None
    max_songs: int | None = None
    styles: str | tuple[str, ...] = "builtin"
    k: int = 3
    renders_per_style: int = 1
    n_validation: int = 10
    n_test: int = 10
    seed: int = 0


@dataclass(frozen=True)
class EvalSpec:
    target_styles: str | tuple[str, ...] = "all"
    baselines: bool = True
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusSpec = CorpusSpec()
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    input_track: str = "all"
    output_track: str = "bass"
    eval: EvalSpec = EvalSpec()
    base_dir: Path = Path(".")

    def model_config(self, num_styles: int, **overrides) -> M.ModelConfig:
        try:
            return M.ModelConfig.from_dict({**self.model, "num_styles": num_styles, **overrides})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None

    def train_config(self, **overrides) -> M.TrainConfig:
        try:
            return M.TrainConfig(**{**self.train, **overrides})
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, corpus=replace(self.corpus, seed=seed))


def parse_config(data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    base = Path(base_dir)
    c = dict(data.get("corpus", {}))
    if isinstance(c.get("styles"), list):
        c["styles"] = tuple(c["styles"])
    corpus = CorpusSpec(**c)
    for key in ("charts", "styles"):
        value = getattr(corpus, key)
        if isinstance(value, str) and value != "builtin" and not (base / value).is_dir():
            raise ConfigError(f"corpus.{key}: directory {value!r} does not exist")
    e = dict(data.get("eval", {}))
    if isinstance(e.get("target_styles"), list):
        e["target_styles"] = tuple(e["target_styles"])
    tracks = data.get("tracks", {})
    cfg = ExperimentConfig(data.get("seed", 0), corpus, dict(data.get("model", {})), dict(data.get("train", {})),
                           tracks.get("input", "all"), tracks.get("output", "bass"), EvalSpec(**e), base)
    if (cfg.input_track, cfg.output_track) not in TRACK_PAIRS:
        raise ConfigError(f"unsupported track pair {cfg.input_track}->{cfg.output_track}")
    cfg.model_config(2)
    cfg.train_config()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(path)!r}: {exc}") from None
    return parse_config(data, path.parent)


# corpus inputs

def builtin_chart_texts() -> list[tuple[str, str]]:
    files = resources.files("stylox") / "charts"
    return sorted((f.name[:-len(".chart")], f.read_text(encoding="utf-8"))
                  for f in files.iterdir() if f.name.endswith(".chart"))


def resolve_charts(cfg: ExperimentConfig) -> tuple[list[tuple[str, ChordChart]], list[str]]:
    """Charts named by the config; parse failures are returned, not raised."""
    spec = cfg.corpus
    if spec.generate:
        charts = generate_charts(spec.generate, spec.seed)
        return charts[:spec.max_songs] if spec.max_songs else charts, []
    if spec.charts == "builtin":
        texts = [(name, f"builtin:{name}.chart", text) for name, text in builtin_chart_texts()]
    else:
        folder = cfg.base_dir / spec.charts
        texts = [(p.stem, str(p), p.read_text(encoding="utf-8")) for p in sorted(folder.glob("*.chart"))]
    charts, failures = [], []
    for name, origin, text in texts:
        try:
            charts.append((name, parse_chart(text)))
        except ChartParseError as exc:
            failures.append(f"{origin}:{exc.line}:{exc.column}: {exc}")
    if spec.max_songs:
        charts = charts[:spec.max_songs]
    return charts, failures


def resolve_styles(cfg: ExperimentConfig) -> list[StyleSpec]:
    spec = cfg.corpus.styles
    if spec == "builtin":
        return builtin_styles()
    if isinstance(spec, tuple):
        reg = style_registry(builtin_styles())
        missing = [s for s in spec if s not in reg]
        if missing:
            raise ConfigError(f"unknown styles {missing}; available: {', '.join(reg)}")
        return [reg[s] for s in spec]
    folder = cfg.base_dir / spec
    try:
        return sorted((load_style(p) for p in sorted(folder.glob("*.json"))), key=lambda s: (s.family, s.name))
    except StyleError as exc:
        raise ConfigError(str(exc)) from None


def make_corpus(cfg: ExperimentConfig, styles: Sequence[StyleSpec] | None = None,
                directions=None, k: int | None = None, renders: int | None = None) -> tuple[PairedCorpus, list[str]]:
    charts, failures = resolve_charts(cfg)
    styles = resolve_styles(cfg) if styles is None else list(styles)
    k = cfg.corpus.k if k is None else k
    if k > len(styles):
        raise ConfigError(f"k={k} exceeds the number of styles ({len(styles)})")
    corpus = build_corpus(charts, styles, k, cfg.corpus.renders_per_style if renders is None else renders,
                          cfg.corpus.seed, cfg.corpus.n_validation, cfg.corpus.n_test, directions)
    return corpus, failures


# corpus on disk

MANIFEST = "manifest.jsonl"
CORPUS_INFO = "corpus.json"


def save_corpus(corpus: PairedCorpus, out_dir: str | Path, styles: Sequence[StyleSpec]) -> str:
    """Write renderings as MIDI, styles as JSON and one manifest line per example.

    Returns the SHA-256 of the manifest.
    """
    out = Path(out_dir)
    (out / "renderings").mkdir(parents=True, exist_ok=True)
    (out / "styles").mkdir(exist_ok=True)
    files = {}
    for key in sorted(corpus.renderings):
        rend = corpus.renderings[key]
        rel = f"renderings/{rend.song_id}__{rend.style}__{rend.render_index}.mid"
        write_midi(song_from_roles(rend.tracks), out / rel)
        files[key] = rel
    for s in styles:
        (out / "styles" / f"{s.name}.json").write_text(json.dumps(style_to_dict(s), indent=1, sort_keys=True) + "\n")
    lines = []
    for ex in corpus.examples:
        lines.append(json.dumps({
            "song_id": ex.song_id, "segment_index": ex.segment_index,
            "source_style": ex.source_style, "target_style": ex.target_style,
            "render_index": ex.render_index, "split": corpus.splits[ex.song_id],
            "source_file": files[(ex.song_id, ex.source_style, ex.render_index)],
            "target_file": files[(ex.song_id, ex.target_style, ex.render_index)],
        }, sort_keys=True))
    manifest = "".join(line + "\n" for line in lines)
    (out / MANIFEST).write_text(manifest, encoding="utf-8")
    info = {
        "styles": corpus.styles,
        "splits": corpus.splits,
        "lengths": {f"{k[0]}__{k[1]}__{k[2]}": r.total_beats for k, r in sorted(corpus.renderings.items())},
        "warnings": corpus.warnings,
    }
    (out / CORPUS_INFO).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return hashlib.sha256(manifest.encode("utf-8")).hexdigest()


def load_corpus(path: str | Path) -> tuple[PairedCorpus, list[StyleSpec]]:
    root = Path(path)
    if not (root / MANIFEST).is_file():
        raise ConfigError(f"no corpus manifest in {str(root)!r}")
    info = json.loads((root / CORPUS_INFO).read_text(encoding="utf-8"))
    styles = sorted((load_style(p) for p in sorted((root / "styles").glob("*.json"))),
                    key=lambda s: (s.family, s.name))
    renderings: dict[tuple[str, str, int], Rendering] = {}
    examples = []
    for line in (root / MANIFEST).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        for style, rel in ((rec["source_style"], rec["source_file"]), (rec["target_style"], rec["target_file"])):
            key = (rec["song_id"], style, rec["render_index"])
            if key not in renderings:
                song = read_midi(root / rel)
                beats = info["lengths"][f"{key[0]}__{key[1]}__{key[2]}"]
                renderings[key] = Rendering(key[0], style, key[2], song.roles(), beats)
        examples.append(PairExample(rec["song_id"], rec["segment_index"], rec["source_style"],
                                    rec["target_style"], rec["render_index"]))
    corpus = PairedCorpus(examples, renderings, info["splits"], info["styles"], info.get("warnings", []),
                          {s.name: s.feel for s in styles}, {s.name: s.family for s in styles})
    return corpus, styles


def corpus_summary(corpus: PairedCorpus) -> dict:
    segments = {(ex.song_id, ex.segment_index, ex.render_index) for ex in corpus.examples}
    return {"songs": len(corpus.songs()), "segments": len(segments), "pairs": len(corpus.examples),
            **{f"{s}_pairs": len(corpus.split(s)) for s in ("train", "validation", "test")}}


# training

def train_model(corpus: PairedCorpus, cfg: ExperimentConfig, input_track: str | None = None,
                output_track: str | None = None, pair: tuple[str, str] | None = None,
                resume: M.Checkpoint | None = None, on_eval=None) -> M.Checkpoint:
    """Train one model; ``pair`` selects the single-direction unconditioned mode."""
    input_track = input_track or cfg.input_track
    output_track = output_track or cfg.output_track
    if (input_track, output_track) not in TRACK_PAIRS:
        raise ConfigError(f"unsupported track pair {input_track}->{output_track}")
    feels = corpus.feels
    if pair is not None:
        src, dst = pair
        for s in pair:
            if s not in corpus.styles:
                raise ConfigError(f"style {s!r} not in corpus; available: {', '.join(corpus.styles)}")
        styles = [dst]
        examples = {split: [ex for ex in corpus.split(split) if (ex.source_style, ex.target_style) == pair]
                    for split in ("train", "validation")}
        mcfg = cfg.model_config(1, conditioned=False)
    else:
        styles = list(corpus.styles)
        examples = {split: None for split in ("train", "validation")}
        mcfg = cfg.model_config(len(styles))
    if resume is not None:
        if resume.styles != styles or resume.config != mcfg:
            raise ConfigError("checkpoint styles or model configuration do not match the corpus/config")
    train_ds = M.build_dataset(corpus, "train", mcfg, input_track, output_track, styles, examples["train"])
    val_ds = M.build_dataset(corpus, "validation", mcfg, input_track, output_track, styles, examples["validation"])
    if not len(train_ds):
        raise ConfigError("no training examples for this selection")
    longest = max(len(t) for t in train_ds.targets)
    if mcfg.max_decode_len < longest:
        raise ConfigError(f"max_decode_len {mcfg.max_decode_len} is shorter than the longest target ({longest})")
    meta = {"input_track": input_track, "output_track": output_track,
            "pair": list(pair) if pair else None}
    return M.train(train_ds, val_ds, mcfg, cfg.train_config(), cfg.seed, styles,
                   {s: feels.get(s, "") for s in styles}, resume, on_eval, meta)


# evaluation

REPORT_COLUMNS = ("model", "track", "target_style", "content_preservation", "macro_style",
                  "song_style_mean", "song_style_std", "anomaly_rate")


@dataclass(frozen=True)
class ReportRow:
    model: str
    track: str
    target_style: str
    content_preservation: float
    macro_style: float
    song_style_mean: float
    song_style_std: float
    anomaly_rate: float


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.model, r.track, r.target_style] +
                   [f"{getattr(r, c):.6f}" for c in REPORT_COLUMNS[3:]])
    return buf.getvalue()


def read_report(text: str) -> list[ReportRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(ReportRow(rec["model"], rec["track"], rec["target_style"],
                              *(float(rec[c]) for c in REPORT_COLUMNS[3:])))
    return rows


def score_outputs(name: str, track: str, corpus: PairedCorpus, examples: Sequence[PairExample],
                  outputs: Sequence[Segment], anomalies: Sequence[int],
                  references: dict[tuple[str, str], np.ndarray]) -> list[ReportRow]:
    """One row per target style.

    Content preservation compares each output with the same-role track of its
    source segment; anomaly_rate is the fraction of outputs with at least one
    decoding anomaly.
    """
    groups: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        groups.setdefault(ex.target_style, []).append(i)
    rows = []
    for style in sorted(groups, key=corpus.styles.index):
        idx = groups[style]
        ref = references.get((style, track))
        if ref is None:
            log.warning("no reference profile for %s/%s; style skipped", style, track)
            continue
        cp = float(np.mean([metrics.content_preservation(outputs[i], corpus.source(examples[i], track))
                            for i in idx]))
        macro = metrics.style_fit_macro([outputs[i] for i in idx], ref)
        by_song: dict[str, list[Segment]] = {}
        for i in idx:
            by_song.setdefault(examples[i].song_id, []).append(outputs[i])
        song = metrics.style_fit_song(by_song, ref)
        rate = float(np.mean([anomalies[i] > 0 for i in idx]))
        rows.append(ReportRow(name, track, style, cp, macro.value, song.mean, song.std, rate))
    return rows


def baseline_rows(corpus: PairedCorpus, examples: Sequence[PairExample], track: str,
                  references: dict[tuple[str, str], np.ndarray], seed: int) -> list[ReportRow]:
    """`source`, `reference` and `random` rows for the given test examples."""
    zeros = [0] * len(examples)
    rows = score_outputs("source", track, corpus, examples,
                         [corpus.source(ex, track) for ex in examples], zeros, references)
    targets = [corpus.target(ex, track) for ex in examples]
    rows += score_outputs("reference", track, corpus, examples, targets, zeros, references)
    shuffled = list(targets)
    rng = Rng(seed).child(f"random-baseline/{track}")
    groups: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        groups.setdefault(ex.target_style, []).append(i)
    for style in sorted(groups):
        idx = groups[style]
        perm = metrics.randomized_baseline(len(idx), rng.child(style))
        for i, p in zip(idx, perm):
            shuffled[i] = targets[idx[p]]
    rows += score_outputs("random", track, corpus, examples, shuffled, zeros, references)
    return rows


def translate_examples(ckpt: M.Checkpoint, corpus: PairedCorpus, examples: Sequence[PairExample],
                       input_track: str, jobs: int = 1, batch_size: int = 32,
                       target_override: str | None = None) -> tuple[list[Segment], list[int]]:
    """Greedy translations of each example's source into its target style."""
    cfg = ckpt.config
    groups: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        groups.setdefault(target_override or ex.target_style, []).append(i)
    work = []
    for style in sorted(groups):
        idx = groups[style]
        for j in range(0, len(idx), batch_size):
            chunk = idx[j:j + batch_size]
            inputs = [M.encode_input(corpus.source(examples[i], input_track), cfg, input_track) for i in chunk]
            work.append((style if cfg.conditioned else None, chunk, inputs))

    def run(item):
        style, chunk, inputs = item
        return chunk, M.translate(ckpt, inputs, style, batch_size=len(inputs))

    outputs: list[Segment | None] = [None] * len(examples)
    anomalies = [0] * len(examples)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(item) for item in work]
    for chunk, res in results:
        for i, t in zip(chunk, res):
            outputs[i] = t.segment
            anomalies[i] = t.anomalies
    return outputs, anomalies


def model_name(ckpt: M.Checkpoint) -> str:
    meta = ckpt.meta
    base = f"{meta.get('input_track', 'all')}2{meta.get('output_track', 'bass')}"
    return f"{base}-1to1" if meta.get("pair") else base


def evaluate(ckpts: Sequence[M.Checkpoint], corpus: PairedCorpus, baselines: bool = True,
             target_styles: Sequence[str] | None = None, split: str = "test", seed: int = 0,
             jobs: int = 1, tracks: Sequence[str] | None = None) -> list[ReportRow]:
    """Report with baseline rows then model rows, per track and target style."""
    rows: list[ReportRow] = []
    if tracks is None:
        tracks = {c.meta.get("output_track", "bass") for c in ckpts} or {"bass"}
    tracks = sorted(set(tracks), key=("bass", "piano").index)
    references = metrics.reference_profiles(corpus, tracks)
    examples = corpus.split(split)
    if target_styles is not None:
        examples = [ex for ex in examples if ex.target_style in set(target_styles)]
    if not examples:
        raise ConfigError(f"no {split} examples to evaluate")
    for track in tracks:
        if baselines:
            rows += baseline_rows(corpus, examples, track, references, seed)
        for ckpt in ckpts:
            if ckpt.meta.get("output_track", "bass") != track:
                continue
            exs = examples
            if ckpt.meta.get("pair"):
                exs = [ex for ex in examples if [ex.source_style, ex.target_style] == ckpt.meta["pair"]]
            outs, anomalies = translate_examples(ckpt, corpus, exs, ckpt.meta.get("input_track", "all"), jobs)
            rows += score_outputs(model_name(ckpt), track, corpus, exs, outs, anomalies, references)
    return rows


# song translation

@dataclass
class SongTranslation:
    notes: NoteList
    anomalies: int
    segments: int
    warnings: list[str]


def translate_notes(ckpt: M.Checkpoint, notes: NoteList, style: str | None, input_track: str,
                    batch_size: int = 32) -> SongTranslation:
    """Translate a whole track in 8-bar segments and join the outputs end to end."""
    if not len(notes):
        return SongTranslation(NoteList((), notes.time_signature), 0, 0, ["input track is empty; output left empty"])
    bars = math.ceil(notes.end / BEATS_PER_BAR - 1e-9)
    segs = segment(notes, bars * BEATS_PER_BAR)
    inputs = [M.encode_input(s, ckpt.config, input_track) for s in segs]
    out = M.translate(ckpt, inputs, style if ckpt.config.conditioned else None, batch_size)
    joined = concat_segments([t.segment for t in out])
    joined = NoteList(joined.notes, notes.time_signature)
    return SongTranslation(joined, sum(t.anomalies for t in out), len(segs), [])


def translate_midi(ckpt: M.Checkpoint, midi: bytes | str | Path, style: str | None,
                   selector: str | None = None) -> tuple[bytes, SongTranslation]:
    song = read_midi(midi)
    selector = selector or ckpt.meta.get("input_track", "all")
    result = translate_notes(ckpt, extract_track(song, selector), style, selector)
    result.warnings = song.warnings + result.warnings
    out_role = ckpt.meta.get("output_track", "bass")
    blob = write_midi(song_from_roles({out_role: result.notes}, song.time_signature))
    return blob, result


# harnesses

@dataclass
class DeskResult:
    corpus: PairedCorpus
    checkpoints: dict[str, M.Checkpoint]
    rows: list[ReportRow]
    failures: list[str]

    @property
    def report(self) -> str:
        return report_csv(self.rows)


def desk_experiment(cfg: ExperimentConfig, tracks: Sequence[str] = ("bass", "piano"),
                    corpus: PairedCorpus | None = None, jobs: int = 1) -> DeskResult:
    """Generate the corpus, train one all->track model per track and evaluate on the test split."""
    failures: list[str] = []
    if corpus is None:
        corpus, failures = make_corpus(cfg)
    ckpts = {}
    for track in tracks:
        log.info("training %s->%s", cfg.input_track, track)
        ckpts[track] = train_model(corpus, cfg, cfg.input_track, track)
    targets = None if cfg.eval.target_styles == "all" else list(cfg.eval.target_styles)
    rows = evaluate(list(ckpts.values()), corpus, cfg.eval.baselines, targets, seed=cfg.seed, jobs=jobs)
    return DeskResult(corpus, ckpts, rows, failures)


COMPARISON_COLUMNS = ("model", "test_set", "content_preservation", "macro_style",
                      "song_style_mean", "song_style_std", "anomaly_rate")


@dataclass
class ComparisonResult:
    rows: list[dict]
    single: M.Checkpoint
    multi: M.Checkpoint

    @property
    def table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for r in self.rows:
            w.writerow([r["model"], r["test_set"]] + [f"{r[c]:.6f}" for c in COMPARISON_COLUMNS[2:]])
        return buf.getvalue()

    def value(self, model: str, test_set: str, column: str = "macro_style") -> float:
        return next(r[column] for r in self.rows if r["model"] == model and r["test_set"] == test_set)


def pair_comparison(cfg: ExperimentConfig, source_style: str, target_style: str, shifted_style: str,
                    multi: M.Checkpoint | None = None, main_corpus: PairedCorpus | None = None,
                    track: str | None = None, jobs: int = 1) -> ComparisonResult:
    """Single-pair (unconditioned) model versus the multi-style model.

    The pair corpus renders every song twice in the two styles and keeps the
    source->target direction only. Both models are scored on the held-out
    songs in two input conditions: the source style itself, and a related
    style rendered with a fresh variation seed (a shifted input distribution).
    """
    track = track or cfg.output_track
    styles = resolve_styles(cfg)
    reg = style_registry(styles)
    for s in (source_style, target_style, shifted_style):
        if s not in reg:
            raise ConfigError(f"unknown style {s!r}; available: {', '.join(reg)}")
    if main_corpus is None:
        main_corpus, _ = make_corpus(cfg, styles)
    if multi is None:
        multi = train_model(main_corpus, cfg, cfg.input_track, track)
    pair_corpus, _ = make_corpus(cfg, [reg[source_style], reg[target_style]],
                                 directions=[(source_style, target_style)], k=2, renders=2)
    single = train_model(pair_corpus, cfg, cfg.input_track, track, pair=(source_style, target_style))

    references = metrics.reference_profiles(pair_corpus, (track,))
    ref = references[(target_style, track)]
    test_songs = pair_corpus.songs("test")
    charts = dict(resolve_charts(cfg)[0])
    in_dist = [ex for ex in pair_corpus.split("test") if ex.render_index == 0]

    # shifted inputs: a related style, freshly seeded, aligned with the same test segments
    shifted = PairedCorpus([], dict(pair_corpus.renderings), dict(pair_corpus.splits), list(pair_corpus.styles))
    shifted.styles.append(shifted_style)
    rng = Rng(cfg.seed).child("shifted")
    shifted_examples = []
    for song in test_songs:
        seed = int(rng.child(song).integers(0, 2**31 - 1))
        shifted.renderings[(song, shifted_style, 0)] = Rendering(
            song, shifted_style, 0, render_song(charts[song], reg[shifted_style], seed), charts[song].total_beats)
    for ex in in_dist:
        shifted_examples.append(PairExample(ex.song_id, ex.segment_index, shifted_style, target_style, 0))

    rows = []
    for test_set, corp, exs in (("in-distribution", pair_corpus, in_dist), ("shifted", shifted, shifted_examples)):
        for name, ckpt in (("1to1", single), ("multi", multi)):
            outs, anomalies = translate_examples(ckpt, corp, exs, cfg.input_track, jobs,
                                                 target_override=target_style)
            by_song: dict[str, list[Segment]] = {}
            for ex, seg in zip(exs, outs):
                by_song.setdefault(ex.song_id, []).append(seg)
            song_fit = metrics.style_fit_song(by_song, ref)
            rows.append({
                "model": name, "test_set": test_set,
                "content_preservation": float(np.mean([metrics.content_preservation(o, corp.source(ex, track))
                                                       for o, ex in zip(outs, exs)])),
                "macro_style": metrics.style_fit_macro(outs, ref).value,
                "song_style_mean": song_fit.mean, "song_style_std": song_fit.std,
                "anomaly_rate": float(np.mean([a > 0 for a in anomalies])),
            })
    return ComparisonResult(rows, single, multi)


def style_profiles_from_corpus(corpus: PairedCorpus, track: str, split: str = "train") -> dict[str, np.ndarray]:
    if track != "all":
        refs = metrics.reference_profiles(corpus, (track,), split)
        return {style: refs[(style, track)] for style in corpus.styles if (style, track) in refs}
    # pool per-role histograms so that no pair mixes two parts
    counts: dict[str, np.ndarray] = {}
    songs = set(corpus.songs(split))
    for (song, style, _), rend in sorted(corpus.renderings.items()):
        if song not in songs:
            continue
        acc = counts.setdefault(style, np.zeros(metrics.PROFILE_SIZE))
        for role in rend.tracks:
            if role != "drums":
                acc += metrics.profile_counts(rend.segments(role))
    return {style: metrics.normalize(counts[style]) for style in corpus.styles if style in counts}


def builtin_style_profiles(track: str = "bass", n_charts: int = 24, seed: int = 0) -> dict[str, np.ndarray]:
    """Profiles of every built-in style rendered over the same synthetic charts."""
    charts = generate_charts(n_charts, seed)
    out = {}
    for style in builtin_styles():
        counts = np.zeros(metrics.PROFILE_SIZE)
        for song_id, chart in charts:
            rseed = int(Rng(seed).child(f"profile/{song_id}/{style.name}").integers(0, 2**31 - 1))
            tracks = render_song(chart, style, rseed)
            # "all" pools the per-role histograms; pairs never mix two parts
            roles = [r for r in tracks if r != "drums"] if track == "all" else [r for r in (track,) if r in tracks]
            for role in roles:
                counts += metrics.profile_counts(segment(tracks[role], chart.total_beats))
        out[style.name] = metrics.normalize(counts)
    return out


def matrix_csv(sim: metrics.SimilarityMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = sim.ordered_names
    w.writerow([""] + names)
    for i in sim.order:
        w.writerow([sim.names[i]] + [f"{sim.matrix[i, j]:.6f}" for j in sim.order])
    return buf.getvalue()


def profile_csv(profiles: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name"] + [f"b{i}" for i in range(metrics.PROFILE_SIZE)])
    for name, vec in profiles.items():
        w.writerow([name] + [f"{x:.8g}" for x in vec])
    return buf.getvalue()
