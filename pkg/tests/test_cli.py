import json
import os

import numpy as np
import pytest

from conftest import frontal_camera, small_config
from sketchssc import cli, io
from sketchssc.pipeline.config import save_config
from sketchssc.sketch import extract_sketch
from sketchssc.tsdf import encode_tsdf
from sketchssc.voxel import GridSpec


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--count", 2, "--dims", "8,8,8", "--classes", 4, "--seed", 7,
               "--out", out) == cli.EXIT_OK
    return out


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    model_cfg, train_cfg = small_config(dims=(8, 8, 8))
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    save_config(path, model_cfg, train_cfg)
    return path


class TestExitCodes:
    def test_no_command(self, capsys):
        assert run() == cli.EXIT_INVALID

    def test_unknown_flag(self, capsys):
        assert run("gen-data", "--count", 1, "--out", "x", "--bogus") == cli.EXIT_INVALID

    def test_bad_dims(self, capsys):
        assert run("gen-data", "--count", 1, "--dims", "8,8", "--out", "x") == cli.EXIT_INVALID

    def test_missing_input_is_io(self, tmp_path, capsys):
        assert run("extract-sketch", "--labels", tmp_path / "none.svox",
                   "--out", tmp_path / "s.svox") == cli.EXIT_IO
        assert "I/O error" in capsys.readouterr().err

    def test_malformed_input_is_validation(self, tmp_path, capsys):
        (tmp_path / "bad.svox").write_bytes(b"nonsense")
        assert run("extract-sketch", "--labels", tmp_path / "bad.svox",
                   "--out", tmp_path / "s.svox") == cli.EXIT_INVALID
        assert "bad.svox" in capsys.readouterr().err

    def test_unwritable_output_is_io(self, dataset, tmp_path, capsys):
        labels = dataset / "scene_0000_labels.svox"
        assert run("extract-sketch", "--labels", labels,
                   "--out", tmp_path / "missing_dir" / "s.svox") == cli.EXIT_IO

    def test_eval_without_checkpoint(self, dataset, tmp_path, capsys):
        assert run("eval", "--data", dataset / "manifest.txt",
                   "--out", tmp_path / "r.json") == cli.EXIT_INVALID


class TestGenData:
    def test_files_and_manifest(self, dataset):
        m = io.read_manifest(dataset / "manifest.txt")
        assert m.spec.dims == (8, 8, 8) and m.num_classes == 4 and len(m.entries) == 2
        for e in m.entries:
            for name in e.files.values():
                assert (dataset / name).is_file()

    def test_deterministic(self, dataset, tmp_path, capsys):
        assert run("gen-data", "--count", 2, "--dims", "8,8,8", "--classes", 4, "--seed", 7,
                   "--out", tmp_path) == cli.EXIT_OK
        for name in os.listdir(dataset):
            assert (dataset / name).read_bytes() == (tmp_path / name).read_bytes(), name


class TestExtractSketch:
    def test_matches_library(self, dataset, tmp_path, capsys):
        assert run("extract-sketch", "--labels", dataset / "scene_0001_labels.svox",
                   "--out", tmp_path / "s.svox") == cli.EXIT_OK
        _, samples = io.read_dataset(dataset / "manifest.txt")
        expected = extract_sketch(samples[1].labels).mask
        np.testing.assert_array_equal(io.read_sketch(tmp_path / "s.svox").mask, expected)
        assert (tmp_path / "s.svox").read_bytes() == (dataset / "scene_0001_sketch.svox").read_bytes()

    def test_rejects_scalar_grid(self, dataset, tmp_path, capsys):
        assert run("extract-sketch", "--labels", dataset / "scene_0000_tsdf.svox",
                   "--out", tmp_path / "s.svox") == cli.EXIT_INVALID


class TestEncodeTsdf:
    def test_matches_library(self, tmp_path, capsys):
        spec = GridSpec((8, 8, 8), 0.1)
        cam = frontal_camera(spec)
        depth = np.full((12, 16), 1.0, dtype=np.float32)
        io.write_depth(tmp_path / "d.dpth", depth)
        io.write_camera(tmp_path / "c.txt", cam)
        assert run("encode-tsdf", "--depth", tmp_path / "d.dpth", "--camera", tmp_path / "c.txt",
                   "--dims", "8,8,8", "--voxel-size", 0.1, "--truncation", 0.3,
                   "--out", tmp_path / "t.svox") == cli.EXIT_OK
        vol = encode_tsdf(depth.astype(np.float64), io.read_camera(tmp_path / "c.txt"), spec, 0.3)
        _, stored, _ = io.read_svox(tmp_path / "t.svox", io.TAG_SCALAR)
        np.testing.assert_array_equal(stored, vol.values.astype(np.float32))

    def test_bad_camera(self, tmp_path, capsys):
        io.write_depth(tmp_path / "d.dpth", np.ones((4, 4), np.float32))
        (tmp_path / "c.txt").write_text("fx=1\n")
        assert run("encode-tsdf", "--depth", tmp_path / "d.dpth", "--camera", tmp_path / "c.txt",
                   "--dims", "8,8,8", "--voxel-size", 0.1,
                   "--out", tmp_path / "t.svox") == cli.EXIT_INVALID


class TestEval:
    def test_ground_truth_scores_one(self, dataset, tmp_path, capsys):
        assert run("eval", "--data", dataset / "manifest.txt", "--use-ground-truth",
                   "--out", tmp_path / "r.json") == cli.EXIT_OK
        rep = io.read_report(tmp_path / "r.json")
        assert rep.sc_iou == 1.0 and rep.ssc_miou == 1.0

    def test_report_is_mean_over_samples(self, dataset, tmp_path, capsys):
        from sketchssc.pipeline.metrics import evaluate
        from sketchssc.pipeline.model import SSCModel
        from sketchssc.pipeline.train import predict

        assert run("train", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--epochs", 1, "--out", tmp_path / "run") == cli.EXIT_OK
        assert run("eval", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--checkpoint", tmp_path / "run" / "checkpoint.skpt",
                   "--out", tmp_path / "r.json") == cli.EXIT_OK
        _, samples = io.read_dataset(dataset / "manifest.txt")
        model = io.load_model(tmp_path / "run" / "checkpoint.skpt",
                              SSCModel(small_config()[0], seed=0))
        preds = predict(model, samples, np.random.default_rng(0))
        singles = [evaluate(p, s.labels, s.masks) for p, s in zip(preds, samples)]
        rep = io.read_report(tmp_path / "r.json")
        for field in ("sc_precision", "sc_recall", "sc_iou", "ssc_miou"):
            assert getattr(rep, field) == pytest.approx(np.mean([getattr(r, field) for r in singles]),
                                                        abs=1e-15)


def _cfg(tmp_path):
    path = tmp_path / "tiny.json"
    if not path.exists():
        save_config(path, *small_config(dims=(8, 8, 8)))
    return path


class TestTrain:
    def test_outputs_and_determinism(self, dataset, tmp_path, capsys):
        args = ["train", "--data", dataset / "manifest.txt", "--eval-data", dataset / "manifest.txt",
                "--config", _cfg(tmp_path), "--epochs", 2, "--seed", 3]
        assert run(*args, "--out", tmp_path / "a") == cli.EXIT_OK
        assert run(*args, "--out", tmp_path / "b") == cli.EXIT_OK
        for name in ("checkpoint.skpt", "report.json", "metrics.jsonl", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        records = io.read_metrics(tmp_path / "a" / "metrics.jsonl")
        assert [r["epoch"] for r in records] == [0, 1]
        assert "loss_total" in records[0] and "ssc_miou" in records[0]
        saved = json.loads((tmp_path / "a" / "config.json").read_text())
        assert saved["train"]["seed"] == 3 and saved["train"]["epochs"] == 2

    def test_variant_flag(self, dataset, tmp_path, capsys):
        assert run("train", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--epochs", 1, "--variant", "one-stage", "--out", tmp_path / "o") == cli.EXIT_OK
        saved = json.loads((tmp_path / "o" / "config.json").read_text())
        assert saved["model"]["two_stage"] is False

    def test_oracle_ablation(self, dataset, tmp_path, capsys):
        assert run("train", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--epochs", 1, "--out", tmp_path / "run") == cli.EXIT_OK
        assert run("oracle-ablation", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--checkpoint", tmp_path / "run" / "checkpoint.skpt",
                   "--drop-rates", 0, 1, "--out", tmp_path / "o.json") == cli.EXIT_OK
        out = json.loads((tmp_path / "o.json").read_text())
        assert set(out) == {"0.0", "1.0"} and "ssc_miou" in out["0.0"]

    def test_oracle_ablation_needs_prior(self, dataset, tmp_path, capsys):
        assert run("train", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--epochs", 1, "--variant", "one-stage", "--out", tmp_path / "run") == cli.EXIT_OK
        one_stage = tmp_path / "one.json"
        save_config(one_stage, *small_config("one-stage", dims=(8, 8, 8)))
        assert run("oracle-ablation", "--data", dataset / "manifest.txt", "--config", one_stage,
                   "--checkpoint", tmp_path / "run" / "checkpoint.skpt",
                   "--out", tmp_path / "o.json") == cli.EXIT_INVALID

    def test_checkpoint_config_mismatch(self, dataset, tmp_path, capsys):
        assert run("train", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--epochs", 1, "--variant", "one-stage", "--out", tmp_path / "run") == cli.EXIT_OK
        assert run("eval", "--data", dataset / "manifest.txt", "--config", _cfg(tmp_path),
                   "--checkpoint", tmp_path / "run" / "checkpoint.skpt",
                   "--out", tmp_path / "r.json") == cli.EXIT_INVALID
