import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_config
from sketchssc import io
from sketchssc.gradsuite import check_total_loss
from sketchssc.pipeline.config import load_config
from sketchssc.pipeline.model import SSCModel
from sketchssc.pipeline.synthetic import generate_dataset
from sketchssc.pipeline.train import (FeatureCache, drop_sketch, evaluate_model, make_batch,
                                      run_oracle_ablation, total_loss, train)
from sketchssc.voxel import GridSpec

SPEC = GridSpec((8, 8, 8), 0.1)


@pytest.fixture(scope="module")
def data():
    return generate_dataset(11, 3, SPEC, 4, image_size=(12, 9))


class TestTotalLoss:
    def test_parts_add_up(self, data):
        cfg, tcfg = small_config()
        model = SSCModel(cfg, seed=0)
        loss, parts = total_loss(data[:2], model, np.random.default_rng(0), tcfg)
        assert loss.item() == parts["total"]
        assert parts["total"] == parts["semantic"] + parts["hybrid"] + parts["sketch"]
        assert parts["hybrid"] == parts["cvae"] + parts["gsnn"] * cfg.hallucination.alpha
        assert min(parts["semantic"], parts["sketch"], parts["cvae"], parts["gsnn"]) > 0

    @pytest.mark.parametrize("variant,present", [
        ("one-stage", set()), ("two-stage", set()), ("two-stage+prior", {"sketch"}),
    ])
    def test_absent_terms_are_zero(self, data, variant, present):
        cfg, tcfg = small_config(variant)
        _, parts = total_loss(data[:1], SSCModel(cfg, seed=0), np.random.default_rng(0), tcfg)
        for name in ("hybrid", "sketch", "cvae", "gsnn"):
            assert (parts[name] > 0) == (name in present)
        assert parts["total"] == parts["semantic"] + parts["sketch"]

    def test_oracle_replaces_stage_one(self, data):
        cfg, tcfg = small_config()
        model = SSCModel(cfg, seed=0)
        oracle = np.stack([s.sketch.mask for s in data[:1]])
        _, parts = total_loss(data[:1], model, np.random.default_rng(0), tcfg, oracle_sketch=oracle)
        assert parts["hybrid"] == parts["sketch"] == 0.0

    def test_grid_mismatch(self, data):
        cfg, _ = small_config(dims=(16, 8, 16))
        with pytest.raises(ValueError):
            make_batch(data[:1], SSCModel(cfg, seed=0))

    def test_gradcheck(self, rng):
        cfg, tcfg = small_config()
        assert check_total_loss(rng, {"model_cfg": cfg, "train_cfg": tcfg}) < 1e-4


class TestFeatureCache:
    def test_projects_once(self, data, monkeypatch):
        model = SSCModel(small_config()[0], seed=0)
        calls = []
        original = model.project
        monkeypatch.setattr(model, "project", lambda *a: calls.append(1) or original(*a))
        cache = FeatureCache(model)
        first = cache(data[0])
        assert cache(data[0]) is first and len(calls) == 1


class TestTrain:
    def test_toy_default_one_sample_loss_strictly_decreases(self):
        model_cfg, train_cfg = load_config()
        sample = generate_dataset(train_cfg.seed, 1, GridSpec(model_cfg.grid_dims, 0.1),
                                  model_cfg.num_classes)
        _, records = train(sample, model_cfg, replace(train_cfg, epochs=20))
        losses = [r["loss_total"] for r in records]
        assert len(losses) == 20
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_same_seed_identical_checkpoints(self, data, tmp_path):
        cfg, tcfg = small_config()
        tcfg = replace(tcfg, epochs=2, batch_size=2, seed=5)
        runs = [train(data, cfg, tcfg, eval_set=data[:1]) for _ in range(2)]
        for i, (model, _) in enumerate(runs):
            io.save_model(tmp_path / f"{i}.skpt", model)
        assert (tmp_path / "0.skpt").read_bytes() == (tmp_path / "1.skpt").read_bytes()
        assert runs[0][1] == runs[1][1]

    def test_different_seed_differs(self, data):
        cfg, tcfg = small_config("one-stage")
        a, _ = train(data[:1], cfg, replace(tcfg, epochs=1, seed=1))
        b, _ = train(data[:1], cfg, replace(tcfg, epochs=1, seed=2))
        assert any(not np.array_equal(x, y) for x, y in
                   zip(a.state_dict().values(), b.state_dict().values()))

    def test_learning_rate_reaches_zero(self, data):
        cfg, tcfg = small_config("one-stage")
        _, records = train(data, cfg, replace(tcfg, epochs=2, batch_size=2))
        assert [r["iteration"] for r in records] == [2, 4]
        assert records[0]["lr"] > 0 and records[-1]["lr"] == 0.0

    def test_epoch_callback_and_metrics(self, data):
        cfg, tcfg = small_config("two-stage")
        seen = []
        _, records = train(data[:2], cfg, replace(tcfg, epochs=2), eval_set=data[2:],
                           on_epoch=seen.append)
        assert seen == records
        assert {"loss_total", "loss_semantic", "sc_iou", "ssc_miou"} <= set(records[0])

    def test_empty_dataset(self):
        cfg, tcfg = small_config()
        with pytest.raises(ValueError):
            train([], cfg, tcfg)

    def test_model_left_in_eval_mode(self, data):
        cfg, tcfg = small_config("one-stage")
        model, _ = train(data[:1], cfg, replace(tcfg, epochs=1))
        assert not model.training


class TestOracle:
    def test_drop_rate_bounds(self, rng):
        sketch = rng.random((4, 4, 4)) < 0.5
        np.testing.assert_array_equal(drop_sketch(sketch, 0.0, rng), sketch)
        assert not drop_sketch(sketch, 1.0, rng).any()
        with pytest.raises(ValueError):
            drop_sketch(sketch, 1.5, rng)

    def test_drop_is_reproducible(self, rng):
        sketch = rng.random((6, 6, 6)) < 0.5
        a = drop_sketch(sketch, 0.4, np.random.default_rng(3))
        b = drop_sketch(sketch, 0.4, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
    def test_drop_only_removes(self, rate, seed):
        rng = np.random.default_rng(seed)
        sketch = rng.random((5, 5, 5)) < 0.5
        kept = drop_sketch(sketch, rate, rng)
        assert not (kept & ~sketch).any()

    def test_full_drop_equals_empty_prior(self, data):
        model = SSCModel(small_config()[0], seed=0)
        model.eval()
        dropped = run_oracle_ablation(data, model, 1.0, np.random.default_rng(0))
        empty = [np.zeros(SPEC.dims, dtype=bool) for _ in data]
        assert dropped == evaluate_model(model, data, np.random.default_rng(0), oracle_sketches=empty)

    def test_oracle_ablation_reproducible(self, data):
        model = SSCModel(small_config()[0], seed=0)
        model.eval()
        a = run_oracle_ablation(data, model, 0.4, np.random.default_rng(9))
        assert a == run_oracle_ablation(data, model, 0.4, np.random.default_rng(9))
