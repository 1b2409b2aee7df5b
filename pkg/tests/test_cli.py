"""End-to-end pipeline tests through the command-line entry points."""

import os

import numpy as np
import pytest

from gcsrec import checkpoint as ckpt
from gcsrec.cli import main
from gcsrec.config import TrainConfig, config_from_text, config_to_text


DESK_CONFIG = """
# desk-scale settings for the test pipeline
model.dim = 8
model.heads = 2
model.layers = 1
model.max_len = 8
model.dropout = 0.1
loss.lambda1 = 0.1
loss.lambda2 = 0.1
sampler.size = 5
batch_size = 32
max_epochs = 2
patience = 5
seed = 3
"""


@pytest.fixture
def pipeline(tmp_path):
    """synth + prepare + build-graph, returning the paths dict."""
    log = tmp_path / "log.tsv"
    prepared = tmp_path / "prepared"
    graph = tmp_path / "graph.txt"
    cfg = tmp_path / "config.txt"
    cfg.write_text(DESK_CONFIG)
    assert main(["synth", "--items", "10", "--users", "25", "--min-len", "8",
                 "--max-len", "12", "--seed", "5", "--out", str(log)]) == 0
    assert main(["prepare", "--data", str(log), "--k-core", "2",
                 "--out", str(prepared)]) == 0
    assert main(["build-graph", "--data", str(prepared), "--out", str(graph)]) == 0
    return {"log": log, "prepared": prepared, "graph": graph, "config": cfg,
            "tmp": tmp_path}


class TestConfigFile:
    def test_roundtrip(self):
        cfg = config_from_text(DESK_CONFIG)
        assert cfg.model.dim == 8 and cfg.batch_size == 32
        again = config_from_text(config_to_text(cfg))
        assert again == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            config_from_text("no_such_key = 7")

    def test_comments_and_blanks_ignored(self):
        cfg = config_from_text("# comment\n\nseed = 9  # trailing\n")
        assert cfg.seed == 9


class TestPrepare:
    def test_writes_split_manifest(self, pipeline):
        manifest = pipeline["prepared"] / "split.txt"
        lines = manifest.read_text().strip().split("\n")
        assert len(lines) == 25
        run_manifest = (pipeline["prepared"] / "run_manifest.txt").read_text()
        assert "input log" in run_manifest and "artifact" in run_manifest

    def test_missing_file_fails_with_path(self, tmp_path, capsys):
        rc = main(["prepare", "--data", str(tmp_path / "absent.tsv"),
                   "--out", str(tmp_path / "p")])
        assert rc != 0
        assert "absent.tsv" in capsys.readouterr().err

    def test_five_core_property_holds(self, tmp_path):
        log = tmp_path / "log.tsv"
        prepared = tmp_path / "prep5"
        main(["synth", "--items", "8", "--users", "40", "--min-len", "8",
              "--max-len", "12", "--noise", "0.3", "--seed", "1", "--out", str(log)])
        assert main(["prepare", "--data", str(log), "--k-core", "5",
                     "--out", str(prepared)]) == 0
        counts_user, counts_item = {}, {}
        for line in (prepared / "sequences.tsv").read_text().strip().split("\n"):
            uidx, items = line.split("\t")
            parsed = items.split(",")
            counts_user[uidx] = len(parsed)
            for it in parsed:
                counts_item[it] = counts_item.get(it, 0) + 1
        assert all(c >= 5 for c in counts_user.values())
        assert all(c >= 5 for c in counts_item.values())


class TestBuildGraph:
    def test_cyclic_corpus_edge_count(self, tmp_path, capsys):
        log = tmp_path / "log.tsv"
        prepared = tmp_path / "prep"
        graph = tmp_path / "g.txt"
        # length-13 noise-free walks visit the whole 10-cycle, so even the
        # train prefixes (two items shorter) cover every +-1..3 offset pair
        main(["synth", "--items", "10", "--users", "30", "--min-len", "13",
              "--max-len", "13", "--seed", "9", "--out", str(log)])
        main(["prepare", "--data", str(log), "--k-core", "2", "--out", str(prepared)])
        assert main(["build-graph", "--data", str(prepared), "--out", str(graph)]) == 0
        assert "edges\t30" in capsys.readouterr().out

    def test_rebuild_identical_bytes(self, pipeline):
        other = pipeline["tmp"] / "graph2.txt"
        assert main(["build-graph", "--data", str(pipeline["prepared"]),
                     "--out", str(other)]) == 0
        assert other.read_bytes() == pipeline["graph"].read_bytes()

    def test_empty_dir_fails(self, tmp_path, capsys):
        rc = main(["build-graph", "--data", str(tmp_path / "nothing"),
                   "--out", str(tmp_path / "g.txt")])
        assert rc != 0


class TestTrainEval:
    def test_train_then_eval(self, pipeline, capsys):
        run = pipeline["tmp"] / "run"
        rc = main(["train", "--config", str(pipeline["config"]),
                   "--data", str(pipeline["prepared"]),
                   "--graph", str(pipeline["graph"]), "--out", str(run)])
        assert rc == 0
        assert (run / "best.ckpt").exists() and (run / "metrics.log").exists()
        assert (run / "report_valid.txt").exists()
        capsys.readouterr()

        rc = main(["eval", "--checkpoint", str(run / "best.ckpt"),
                   "--data", str(pipeline["prepared"]),
                   "--graph", str(pipeline["graph"]),
                   "--config", str(pipeline["config"]),
                   "--mode", "test", "--k", "1,5"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "HR@10" in out and "HR@1" in out and "HR@5" in out

    def test_max_epochs_zero_still_produces_artifacts(self, pipeline):
        cfg = pipeline["tmp"] / "zero.txt"
        cfg.write_text(DESK_CONFIG.replace("max_epochs = 2", "max_epochs = 0"))
        run = pipeline["tmp"] / "run0"
        rc = main(["train", "--config", str(cfg),
                   "--data", str(pipeline["prepared"]),
                   "--graph", str(pipeline["graph"]), "--out", str(run)])
        assert rc == 0
        params = ckpt.load_params(str(run / "best.ckpt"))
        assert params.cfg.dim == 8

    def test_train_determinism_logs_and_checkpoints(self, pipeline):
        runs = []
        for name in ("runA", "runB"):
            out = pipeline["tmp"] / name
            assert main(["train", "--config", str(pipeline["config"]),
                         "--data", str(pipeline["prepared"]),
                         "--graph", str(pipeline["graph"]), "--out", str(out)]) == 0
            runs.append(out)
        log_a = (runs[0] / "metrics.log").read_bytes()
        log_b = (runs[1] / "metrics.log").read_bytes()
        assert log_a == log_b
        assert ckpt.file_sha256(str(runs[0] / "best.ckpt")) == \
            ckpt.file_sha256(str(runs[1] / "best.ckpt"))

    def test_seed_flag_changes_run(self, pipeline):
        outs = []
        for name, seed in (("s1", "3"), ("s2", "4")):
            out = pipeline["tmp"] / name
            assert main(["train", "--config", str(pipeline["config"]),
                         "--seed", seed, "--data", str(pipeline["prepared"]),
                         "--graph", str(pipeline["graph"]), "--out", str(out)]) == 0
            outs.append((out / "metrics.log").read_bytes())
        assert outs[0] != outs[1]

    def test_lock_blocks_concurrent_use(self, pipeline, capsys):
        run = pipeline["tmp"] / "locked"
        run.mkdir()
        (run / ".lock").write_text("12345")
        rc = main(["train", "--config", str(pipeline["config"]),
                   "--data", str(pipeline["prepared"]),
                   "--graph", str(pipeline["graph"]), "--out", str(run)])
        assert rc != 0
        assert "locked" in capsys.readouterr().err

    def test_env_var_defaults(self, pipeline, monkeypatch, capsys):
        run = pipeline["tmp"] / "runenv"
        monkeypatch.setenv("GCSREC_DATA", str(pipeline["prepared"]))
        monkeypatch.setenv("GCSREC_GRAPH", str(pipeline["graph"]))
        monkeypatch.setenv("GCSREC_CONFIG", str(pipeline["config"]))
        rc = main(["train", "--out", str(run)])
        assert rc == 0 and (run / "best.ckpt").exists()


class TestAblate:
    def test_grid_has_exactly_four_variants(self, pipeline, capsys):
        cfg = pipeline["tmp"] / "fast.txt"
        cfg.write_text(DESK_CONFIG.replace("max_epochs = 2", "max_epochs = 1"))
        out = pipeline["tmp"] / "ablate"
        rc = main(["ablate", "--config", str(cfg),
                   "--data", str(pipeline["prepared"]),
                   "--graph", str(pipeline["graph"]), "--out", str(out)])
        assert rc == 0
        grid = (out / "ablation_grid.txt").read_text().strip().split("\n")
        labels = [ln.split()[0] + (" " + ln.split()[1] if ln.startswith("w/o") else "")
                  for ln in grid[1:]]
        assert labels == ["full", "w/o G", "w/o GM", "w/o W"]
        for ablation in ("full", "no_gcl", "no_gcl_no_mmd", "unweighted_edges"):
            assert (out / f"metrics_{ablation}.log").exists()


class TestCheckpointFormat:
    def test_roundtrip_and_checksum(self, pipeline, tmp_path):
        run = pipeline["tmp"] / "ckrun"
        main(["train", "--config", str(pipeline["config"]),
              "--data", str(pipeline["prepared"]),
              "--graph", str(pipeline["graph"]), "--out", str(run)])
        path = run / "best.ckpt"
        params = ckpt.load_params(str(path))
        copy = tmp_path / "copy.ckpt"
        ckpt.save_params(str(copy), params)
        assert ckpt.file_sha256(str(copy)) == ckpt.file_sha256(str(path))
        params2 = ckpt.load_params(str(copy))
        for (n1, t1), (n2, t2) in zip(params.named(), params2.named()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_tamper_detected(self, pipeline):
        run = pipeline["tmp"] / "tamper"
        main(["train", "--config", str(pipeline["config"]),
              "--data", str(pipeline["prepared"]),
              "--graph", str(pipeline["graph"]), "--out", str(run)])
        path = run / "best.ckpt"
        blob = bytearray(path.read_bytes())
        blob[-3] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            ckpt.load_params(str(path))
