"""Command line: corpus generation, training, translation, evaluation, profiles."""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click
from threadpoolctl import threadpool_limits

from . import experiments as X
from . import metrics
from . import model as M
from .arranger import StyleError, builtin_styles
from .chart import ChartParseError
from .midi_io import MidiFormatError, UnsupportedTimeSignature, extract_track, read_midi

EXIT_RUNTIME = 1
EXIT_CONFIG = 2

log = logging.getLogger("stylox")


class Context:
    def __init__(self, seed: int | None, config: str | None, jobs: int):
        self.seed = seed
        self.config_path = config
        self.jobs = jobs

    def config(self) -> X.ExperimentConfig:
        cfg = X.load_config(self.config_path)
        return cfg if self.seed is None else cfg.with_seed(self.seed)


def _guard(fn):
    """Map configuration problems to exit code 2 and runtime failures to 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (X.ConfigError, StyleError, KeyError) as exc:
            click.echo(f"config error: {exc.args[0] if exc.args else exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (MidiFormatError, UnsupportedTimeSignature, ChartParseError, ValueError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def _write(path: str | None, text: str):
    if path in (None, "-"):
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text, encoding="utf-8")


@click.group()
@click.option("--seed", type=int, default=None, help="Override every seed in the config.")
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="Experiment config (JSON).")
@click.option("--jobs", type=click.IntRange(1), default=1, show_default=True, help="Worker threads for translation.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, seed, config, jobs, verbose):
    """Accompaniment style translation workbench."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    # single-threaded BLAS keeps every command bit-reproducible
    ctx.with_resource(threadpool_limits(limits=1))
    ctx.obj = Context(seed, config, jobs)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_obj
@_guard
def gen(obj: Context, out_dir):
    """Render charts in sampled styles and write the paired corpus."""
    cfg = obj.config()
    corpus, failures = X.make_corpus(cfg)
    for f in failures:
        click.echo(f"chart parse failure: {f}", err=True)
    digest = X.save_corpus(corpus, out_dir, X.resolve_styles(cfg))
    summary = X.corpus_summary(corpus)
    click.echo(" ".join(f"{k}={v}" for k, v in summary.items()) + f" manifest_sha256={digest}")


def _parse_pair(pair: str | None):
    if pair is None:
        return None
    parts = pair.split(":")
    if len(parts) != 2 or not all(parts):
        raise X.ConfigError(f"--pair expects SRC:DST, got {pair!r}")
    return tuple(parts)


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--track", "track_pair", default=None, help="Track pair IN:OUT, e.g. all:bass (default from config).")
@click.option("--pair", default=None, help="Train a single-direction model SRC:DST without style conditioning.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--curve", type=click.Path(dir_okay=False), default=None, help="Training curve CSV (default OUT.curve.csv).")
@click.pass_obj
@_guard
def train(obj: Context, corpus_dir, out_path, track_pair, pair, resume, curve):
    """Train a model on a generated corpus."""
    cfg = obj.config()
    corpus, _ = X.load_corpus(corpus_dir)
    inp, out = cfg.input_track, cfg.output_track
    if track_pair:
        try:
            inp, out = track_pair.split(":")
        except ValueError:
            raise X.ConfigError(f"--track expects IN:OUT, got {track_pair!r}") from None
    previous = M.Checkpoint.load(resume) if resume else None
    ckpt = X.train_model(corpus, cfg, inp, out, _parse_pair(pair), previous,
                         on_eval=lambda p: log.info("step %d val %.4f", p.step, p.val_loss))
    ckpt.save(out_path)
    _write(curve or f"{out_path}.curve.csv", M.curve_csv(ckpt.curve))
    best = min((c.val_loss for c in ckpt.curve), default=float("nan"))
    click.echo(f"checkpoint={out_path} step={ckpt.step} best_val_loss={best:.4f} status={ckpt.meta.get('status')}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--style", required=True, help="Target style name, or 'all' for one file per style.")
@click.option("--track", "selector", type=click.Choice(["bass", "piano", "all"]), default=None,
              help="Input track selector (default: the one the model was trained on).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
@_guard
def translate(obj: Context, checkpoint, input_path, style, selector, out_path):
    """Translate a MIDI file segment by segment and write the result as MIDI."""
    ckpt = M.Checkpoint.load(checkpoint)
    if style == "all":
        targets = list(ckpt.styles)
        Path(out_path).mkdir(parents=True, exist_ok=True)
        paths = [Path(out_path) / f"{Path(input_path).stem}.{s}.mid" for s in targets]
    else:
        if ckpt.config.conditioned and style not in ckpt.styles:
            raise X.ConfigError(f"unknown style {style!r}; available: {', '.join(ckpt.styles)}")
        targets, paths = [style], [Path(out_path)]
    for target, path in zip(targets, paths):
        blob, res = X.translate_midi(ckpt, input_path, target, selector)
        path.write_bytes(blob)
        for w in res.warnings:
            click.echo(f"warning: {w}", err=True)
        click.echo(f"{path}: style={target} segments={res.segments} notes={len(res.notes)} anomalies={res.anomalies}")


@main.command(name="eval")
@click.option("--checkpoint", "checkpoints", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--baselines/--no-baselines", default=True, show_default=True)
@click.option("--split", type=click.Choice(["train", "validation", "test"]), default="test", show_default=True)
@click.option("--track", "tracks", multiple=True, type=click.Choice(["bass", "piano"]),
              help="Tracks to report (default: the checkpoints' output tracks).")
@click.option("--out", "out_path", default="-", type=click.Path(dir_okay=False))
@click.pass_obj
@_guard
def eval_cmd(obj: Context, checkpoints, corpus_dir, baselines, split, tracks, out_path):
    """Score models (and baselines) on a corpus split; writes the report CSV."""
    cfg = obj.config()
    corpus, _ = X.load_corpus(corpus_dir)
    ckpts = [M.Checkpoint.load(c) for c in checkpoints]
    for c in ckpts:
        if c.config.conditioned and [s for s in c.styles if s not in corpus.styles]:
            raise X.ConfigError("checkpoint styles do not match the corpus")
    targets = None if cfg.eval.target_styles == "all" else list(cfg.eval.target_styles)
    if not ckpts and not baselines:
        raise X.ConfigError("nothing to evaluate: give --checkpoint or --baselines")
    rows = X.evaluate(ckpts, corpus, baselines, targets, split, cfg.seed, obj.jobs, tracks or None)
    _write(out_path, X.report_csv(rows))


@main.command()
@click.argument("midi_files", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Use per-style profiles of a corpus training split.")
@click.option("--builtin", is_flag=True, help="Use the built-in styles rendered over synthetic charts.")
@click.option("--track", type=click.Choice(["bass", "piano", "all"]), default="bass", show_default=True)
@click.option("--matrix/--vectors", default=None, help="Similarity matrix (default when there are >= 2 inputs).")
@click.option("--out", "out_path", default="-", type=click.Path(dir_okay=False))
@click.pass_obj
@_guard
def profile(obj: Context, midi_files, corpus_dir, builtin, track, matrix, out_path):
    """Style profiles (984 values per input) or their clustered similarity matrix."""
    profiles = {}
    if builtin:
        profiles.update(X.builtin_style_profiles(track, seed=obj.seed or 0))
    if corpus_dir:
        corpus, _ = X.load_corpus(corpus_dir)
        profiles.update(X.style_profiles_from_corpus(corpus, track))
    for f in midi_files:
        song = read_midi(f)
        if track == "all":
            tracks = [t.notes for t in song.tracks if t.role != "drums"]
        else:
            tracks = [extract_track(song, track)]
        profiles[Path(f).stem] = metrics.style_profile(tracks)
    if not profiles:
        raise X.ConfigError("no inputs: give MIDI files, --corpus or --builtin")
    if matrix is None:
        matrix = len(profiles) >= 2
    if matrix:
        if len(profiles) < 2:
            raise X.ConfigError("matrix mode needs at least two inputs")
        _write(out_path, X.matrix_csv(metrics.profile_similarity_matrix(profiles)))
    else:
        _write(out_path, X.profile_csv(profiles))


@main.command(name="export-embeddings")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default="-", type=click.Path(dir_okay=False))
@_guard
def export_embeddings(checkpoint, out_path):
    """Style embedding rows with feel labels, for external projection tools."""
    _write(out_path, M.export_style_embeddings(M.Checkpoint.load(checkpoint)))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--tracks", default="bass,piano", show_default=True, help="Output tracks to train models for.")
@click.pass_obj
@_guard
def experiment(obj: Context, out_dir, tracks):
    """Full desk experiment: corpus, one model per output track, evaluation report."""
    cfg = obj.config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, failures = X.make_corpus(cfg)
    for f in failures:
        click.echo(f"chart parse failure: {f}", err=True)
    X.save_corpus(corpus, out / "corpus", X.resolve_styles(cfg))
    result = X.desk_experiment(cfg, [t.strip() for t in tracks.split(",") if t.strip()], corpus, obj.jobs)
    for track, ckpt in result.checkpoints.items():
        ckpt.save(out / f"{cfg.input_track}2{track}.ckpt")
        (out / f"{cfg.input_track}2{track}.curve.csv").write_text(M.curve_csv(ckpt.curve))
    (out / "report.csv").write_text(result.report)
    click.echo(result.report, nl=False)


@main.command()
@click.option("--pair", required=True, help="SRC:DST style pair for the single-direction model.")
@click.option("--shifted", "shifted_style", required=True, help="Related style used as shifted test input.")
@click.option("--multi", "multi_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Existing multi-style checkpoint (trained if omitted).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.pass_obj
@_guard
def compare(obj: Context, pair, shifted_style, multi_path, out_dir):
    """Single-pair versus multi-style comparison table."""
    cfg = obj.config()
    src, dst = _parse_pair(pair)
    multi = M.Checkpoint.load(multi_path) if multi_path else None
    result = X.pair_comparison(cfg, src, dst, shifted_style, multi, jobs=obj.jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.single.save(out / "single.ckpt")
    if multi is None:
        result.multi.save(out / "multi.ckpt")
    (out / "comparison.csv").write_text(result.table)
    click.echo(result.table, nl=False)


@main.command(name="styles")
def list_styles():
    """List the built-in styles."""
    for s in builtin_styles():
        click.echo(f"{s.name}\t{s.family}\t{s.feel}\t{','.join(s.roles)}")


if __name__ == "__main__":
    main()
