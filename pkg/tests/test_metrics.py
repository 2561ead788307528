import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sketchssc.pipeline.metrics import EvalReport, evaluate, mean_report
from sketchssc.voxel import IGNORE, GridSpec, SemanticLabelGrid, VisibilityMasks


def masks_for(occluded, surface=None):
    occluded = np.asarray(occluded, dtype=bool)
    surface = np.zeros_like(occluded) if surface is None else np.asarray(surface, dtype=bool)
    frustum = occluded | surface
    return VisibilityMasks(frustum, surface, np.zeros_like(occluded), occluded)


def labels(arr, num_classes=4):
    arr = np.asarray(arr, dtype=np.uint8)
    return SemanticLabelGrid(GridSpec(arr.shape, 0.1), arr, num_classes)


def fixture():
    """10 occluded voxels: ground truth fills 6, the prediction 5, and 4 overlap."""
    gt = np.zeros((10, 1, 1), dtype=np.uint8)
    pred = np.zeros((10, 1, 1), dtype=np.uint8)
    gt[:6] = 1
    pred[2:7] = 1
    return pred, labels(gt), masks_for(np.ones((10, 1, 1)))


class TestEvaluate:
    def test_hand_computed_fixture(self):
        pred, gt, m = fixture()
        r = evaluate(pred, gt, m)
        assert r.sc_precision == 0.8
        assert r.sc_recall == 4 / 6
        assert r.sc_iou == 4 / 7

    def test_perfect_prediction(self, rng):
        gt = rng.integers(0, 4, size=(6, 5, 4)).astype(np.uint8)
        gt[0] = IGNORE
        occ = rng.random(gt.shape) < 0.5
        r = evaluate(gt, labels(gt), masks_for(occ, ~occ))
        assert r.sc_precision == r.sc_recall == r.sc_iou == r.ssc_miou == 1.0
        assert all(v == 1.0 for v in r.ssc_iou.values() if v is not None)

    def test_empty_prediction_has_zero_recall(self):
        _, gt, m = fixture()
        assert evaluate(np.zeros((10, 1, 1)), gt, m).sc_recall == 0.0

    def test_ignore_excluded(self):
        pred, gt, m = fixture()
        g = gt.labels.copy()
        g[9] = IGNORE
        p = pred.copy()
        p[9] = 3
        r = evaluate(p, labels(g), m)
        assert r.sc_precision == 0.8

    def test_ssc_uses_surface_and_occluded(self):
        gt = np.array([1, 1, 2, 0], dtype=np.uint8).reshape(4, 1, 1)
        pred = np.array([1, 2, 2, 0], dtype=np.uint8).reshape(4, 1, 1)
        surface = np.array([1, 0, 0, 0], bool).reshape(4, 1, 1)
        occluded = np.array([0, 1, 1, 0], bool).reshape(4, 1, 1)
        r = evaluate(pred, labels(gt), masks_for(occluded, surface))
        assert r.ssc_iou[1] == 0.5 and r.ssc_iou[2] == 0.5 and r.ssc_iou[3] is None
        assert r.ssc_miou == 0.5

    def test_dims_mismatch(self):
        _, gt, m = fixture()
        with pytest.raises(ValueError):
            evaluate(np.zeros((9, 1, 1)), gt, m)

    @settings(max_examples=100, deadline=None)
    @given(gt=arrays(np.uint8, (4, 3, 3), elements=st.integers(0, 3)),
           pred=arrays(np.uint8, (4, 3, 3), elements=st.integers(0, 3)),
           occ=arrays(bool, (4, 3, 3)), surf=arrays(bool, (4, 3, 3)))
    def test_bounds(self, gt, pred, occ, surf):
        r = evaluate(pred, labels(gt), masks_for(occ & ~surf, surf))
        values = [r.sc_precision, r.sc_recall, r.sc_iou, r.ssc_miou]
        values += [v for v in r.ssc_iou.values() if v is not None]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert r.sc_iou <= r.sc_precision + 1e-15 and r.sc_iou <= r.sc_recall + 1e-15
        present = [v for v in r.ssc_iou.values() if v is not None]
        if present:
            assert r.ssc_miou == pytest.approx(np.mean(present))


class TestReport:
    def test_dict_round_trip(self):
        r = EvalReport(0.5, 0.25, 0.2, {1: 0.5, 2: None}, 0.5)
        d = r.to_dict()
        assert list(d) == ["sc_precision", "sc_recall", "sc_iou", "ssc_iou.1", "ssc_iou.2", "ssc_miou"]
        assert EvalReport.from_dict(d) == r

    def test_mean_of_two(self):
        a = EvalReport(1.0, 0.5, 0.5, {1: 1.0, 2: None}, 1.0)
        b = EvalReport(0.0, 0.5, 0.25, {1: 0.5, 2: 0.25}, 0.375)
        m = mean_report([a, b])
        assert (m.sc_precision, m.sc_recall, m.sc_iou, m.ssc_miou) == (0.5, 0.5, 0.375, 0.6875)
        assert m.ssc_iou == {1: 0.75, 2: 0.25}

    def test_mean_of_nothing(self):
        with pytest.raises(ValueError):
            mean_report([])
