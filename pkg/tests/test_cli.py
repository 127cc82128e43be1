from __future__ import annotations

import csv
import io
import json

import pytest
from click.testing import CliRunner

from stylox.cli import main
from stylox.experiments import read_report
from stylox.midi_io import read_midi, song_from_roles, write_midi
from stylox.notes import Note, NoteList

CHARTS = {
    "a": "| C | Am | F | G7 | C | Am | Dm | G7 |",
    "b": "| F | Dm | Bb | C7 | F | Dm | Gm | C7 |",
    "c": "| G | Em | C | D7 | G | Em | Am | D7 |",
    "d": "| D | Bm | G | A7 | D | Bm | Em | A7 |",
    "e": "| A | F#m | D | E7 | A | F#m | Bm | E7 |",
    "broken": "| Cx |",
}

CONFIG = {
    "seed": 3,
    "corpus": {"charts": "charts", "styles": ["jazz_swing", "jazz_bop", "rock_eighths", "rock_twist"],
               "k": 3, "n_validation": 1, "n_test": 1},
    "model": {"encoder_hidden": 8, "decoder_hidden": 12, "attention_dim": 6, "conv_channels": [8, 8],
              "token_embed_dim": 6, "style_embed_dim": 3},
    "train": {"batch_size": 8, "eval_every": 10, "max_steps": 30, "lr": 0.01},
    "tracks": {"input": "all", "output": "bass"},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    (root / "charts").mkdir()
    for name, text in CHARTS.items():
        (root / "charts" / f"{name}.chart").write_text(text + "\n")
    (root / "config.json").write_text(json.dumps(CONFIG))
    runner = CliRunner()
    gen = runner.invoke(main, ["--config", str(root / "config.json"), "gen", "--out", str(root / "corpus")])
    train = runner.invoke(main, ["--config", str(root / "config.json"), "train", "--corpus", str(root / "corpus"),
                                 "--out", str(root / "m.ckpt")])
    return root, gen, train


def run(root, *args):
    return CliRunner().invoke(main, ["--config", str(root / "config.json"), *args])


class TestGen:
    def test_summary_and_failures(self, workspace):
        root, gen, _ = workspace
        assert gen.exit_code == 0, gen.output
        assert "broken.chart:1:4" in gen.output
        fields = dict(kv.split("=") for kv in gen.stdout.split())
        assert fields["songs"] == "5" and int(fields["pairs"]) == 6 * int(fields["segments"])
        lines = (root / "corpus" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == int(fields["pairs"])

    def test_manifest_hash_stable(self, workspace, tmp_path):
        root, gen, _ = workspace
        again = run(root, "gen", "--out", str(tmp_path / "c2"))
        digest = lambda out: out.split("manifest_sha256=")[1].split()[0]
        assert digest(again.stdout) == digest(gen.stdout)

    def test_k_too_large_is_config_error(self, tmp_path):
        cfg = json.loads(json.dumps(CONFIG))
        cfg["corpus"].update(k=5, charts="builtin", max_songs=2)
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        res = CliRunner().invoke(main, ["--config", str(tmp_path / "c.json"), "gen", "--out", str(tmp_path / "o")])
        assert res.exit_code == 2 and "k=5" in res.output

    def test_bad_config_exit_code(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"tracks": {"input": "drums"}}))
        res = CliRunner().invoke(main, ["--config", str(tmp_path / "c.json"), "gen", "--out", str(tmp_path / "o")])
        assert res.exit_code == 2
        res = CliRunner().invoke(main, ["--config", str(tmp_path / "missing.json"), "styles"])
        assert res.exit_code == 0  # commands that do not read the config ignore it


class TestTrain:
    def test_checkpoint_and_curve(self, workspace):
        root, _, train = workspace
        assert train.exit_code == 0, train.output
        assert (root / "m.ckpt").exists()
        rows = list(csv.DictReader(io.StringIO((root / "m.ckpt.curve.csv").read_text())))
        assert [int(r["step"]) for r in rows] == [10, 20, 30]
        assert float(rows[-1]["val_loss"]) < float(rows[0]["val_loss"])

    def test_resume_continues(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "train", "--corpus", str(root / "corpus"), "--out", str(tmp_path / "r.ckpt"),
                  "--resume", str(root / "m.ckpt"))
        assert res.exit_code == 0, res.output
        # max_steps is absolute, so resuming a finished run stops after one more evaluation
        assert "step=" in res.stdout and int(res.stdout.split("step=")[1].split()[0]) >= 30

    def test_pair_mode_has_no_style_table(self, workspace, tmp_path):
        root, _, _ = workspace
        from stylox.model import Checkpoint
        corpus_styles = json.loads((root / "corpus" / "corpus.json").read_text())["styles"]
        manifest = [json.loads(x) for x in (root / "corpus" / "manifest.jsonl").read_text().splitlines()]
        train_pairs = sorted({(m["source_style"], m["target_style"]) for m in manifest if m["split"] == "train"})
        src, dst = train_pairs[0]
        res = run(root, "train", "--corpus", str(root / "corpus"), "--out", str(tmp_path / "p.ckpt"),
                  "--pair", f"{src}:{dst}")
        assert res.exit_code == 0, res.output
        ck = Checkpoint.load(tmp_path / "p.ckpt")
        assert "dec.style" not in ck.params and ck.styles == [dst] and src in corpus_styles

    def test_bad_track_pair(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "train", "--corpus", str(root / "corpus"), "--out", str(tmp_path / "x"), "--track", "bass:piano")
        assert res.exit_code == 2


class TestTranslate:
    def _input(self, tmp_path, notes=True):
        tracks = {"bass": NoteList(tuple(Note(36 + i % 5, i, i + 1) for i in range(40)) if notes else ()),
                  "piano": NoteList(tuple(Note(60, i, i + 2) for i in range(0, 40, 2)))}
        path = tmp_path / "in.mid"
        write_midi(song_from_roles(tracks), path)
        return path

    def test_single_style(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "translate", "--checkpoint", str(root / "m.ckpt"), "--input", str(self._input(tmp_path)),
                  "--style", "rock_twist", "--out", str(tmp_path / "out.mid"))
        assert res.exit_code == 0, res.output
        assert "segments=2" in res.stdout and "anomalies=" in res.stdout
        song = read_midi(tmp_path / "out.mid")
        assert {t.role for t in song.tracks} <= {"bass"}

    def test_all_styles_fan_out(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "translate", "--checkpoint", str(root / "m.ckpt"), "--input", str(self._input(tmp_path)),
                  "--style", "all", "--out", str(tmp_path / "outs"))
        assert res.exit_code == 0, res.output
        assert len(list((tmp_path / "outs").glob("*.mid"))) == 4

    def test_unknown_style_lists_available(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "translate", "--checkpoint", str(root / "m.ckpt"), "--input", str(self._input(tmp_path)),
                  "--style", "polka", "--out", str(tmp_path / "o.mid"))
        assert res.exit_code == 2 and "jazz_swing" in res.output

    def test_empty_track_warns(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "translate", "--checkpoint", str(root / "m.ckpt"), "--track", "bass",
                  "--input", str(self._input(tmp_path, notes=False)), "--style", "rock_twist",
                  "--out", str(tmp_path / "o.mid"))
        assert res.exit_code == 0 and "warning" in res.output
        assert read_midi(tmp_path / "o.mid").roles().get("bass", NoteList()).notes == ()

    def test_malformed_midi_runtime_error(self, workspace, tmp_path):
        root, _, _ = workspace
        (tmp_path / "bad.mid").write_bytes(b"MThd\x00\x00")
        res = run(root, "translate", "--checkpoint", str(root / "m.ckpt"), "--input", str(tmp_path / "bad.mid"),
                  "--style", "rock_twist", "--out", str(tmp_path / "o.mid"))
        assert res.exit_code == 1


class TestEval:
    def test_report_structure(self, workspace, tmp_path):
        root, _, _ = workspace
        res = run(root, "eval", "--checkpoint", str(root / "m.ckpt"), "--corpus", str(root / "corpus"),
                  "--out", str(tmp_path / "r.csv"))
        assert res.exit_code == 0, res.output
        rows = read_report((tmp_path / "r.csv").read_text())
        models = {r.model for r in rows}
        assert models == {"source", "reference", "random", "all2bass"}
        styles = {r.target_style for r in rows}
        assert len(rows) == 4 * len(styles)
        assert all(0.5 < r.macro_style <= 1 + 1e-9 for r in rows if r.model == "reference")
        again = run(root, "eval", "--checkpoint", str(root / "m.ckpt"), "--corpus", str(root / "corpus"))
        assert again.stdout == (tmp_path / "r.csv").read_text()

    def test_reference_matches_its_own_profile_on_train(self, workspace):
        root, _, _ = workspace
        res = run(root, "eval", "--corpus", str(root / "corpus"), "--split", "train", "--track", "bass")
        assert res.exit_code == 0, res.output
        ref = [r for r in read_report(res.stdout) if r.model == "reference"]
        assert ref and all(abs(r.macro_style - 1.0) < 0.02 for r in ref)

    def test_nothing_to_evaluate(self, workspace):
        root, _, _ = workspace
        res = run(root, "eval", "--corpus", str(root / "corpus"), "--no-baselines")
        assert res.exit_code == 2


class TestProfileAndEmbeddings:
    def test_single_file_vector(self, workspace, tmp_path):
        root, _, _ = workspace
        path = root / "corpus" / "renderings"
        first = sorted(path.glob("*.mid"))[0]
        res = run(root, "profile", str(first), "--out", str(tmp_path / "p.csv"))
        assert res.exit_code == 0, res.output
        rows = list(csv.reader(io.StringIO((tmp_path / "p.csv").read_text())))
        assert len(rows[1]) == 1 + 984

    def test_matrix_symmetric(self, workspace):
        root, _, _ = workspace
        res = run(root, "profile", "--corpus", str(root / "corpus"))
        assert res.exit_code == 0, res.output
        rows = list(csv.reader(io.StringIO(res.stdout)))
        names = rows[0][1:]
        m = {r[0]: dict(zip(names, map(float, r[1:]))) for r in rows[1:]}
        assert all(abs(m[a][b] - m[b][a]) < 1e-9 for a in names for b in names)
        assert all(abs(m[a][a] - 1) < 1e-9 for a in names)

    def test_matrix_needs_two(self, workspace, tmp_path):
        root, _, _ = workspace
        first = sorted((root / "corpus" / "renderings").glob("*.mid"))[0]
        res = run(root, "profile", str(first), "--matrix")
        assert res.exit_code == 2

    def test_export_embeddings(self, workspace):
        root, _, _ = workspace
        res = run(root, "export-embeddings", "--checkpoint", str(root / "m.ckpt"))
        assert res.exit_code == 0
        rows = list(csv.reader(io.StringIO(res.stdout)))
        assert rows[0][:2] == ["style", "feel"] and len(rows) == 5

    def test_styles_listing(self):
        res = CliRunner().invoke(main, ["styles"])
        assert res.exit_code == 0 and len(res.stdout.splitlines()) >= 8
