"""Scene completion (SC) and semantic scene completion (SSC) scores."""

from dataclasses import dataclass

import numpy as np

from ..voxel import IGNORE, SemanticLabelGrid, VisibilityMasks

REPORT_FIELDS = ("sc_precision", "sc_recall", "sc_iou", "ssc_miou")


@dataclass(frozen=True)
class EvalReport:
    sc_precision: float
    sc_recall: float
    sc_iou: float
    ssc_iou: dict
    ssc_miou: float

    def to_dict(self):
        """Flat record with the fixed report keys; absent classes map to None."""
        out = {"sc_precision": self.sc_precision, "sc_recall": self.sc_recall,
               "sc_iou": self.sc_iou}
        for c in sorted(self.ssc_iou):
            out[f"ssc_iou.{c}"] = self.ssc_iou[c]
        out["ssc_miou"] = self.ssc_miou
        return out

    @classmethod
    def from_dict(cls, d):
        classes = {int(k.split(".", 1)[1]): v for k, v in d.items() if k.startswith("ssc_iou.")}
        return cls(d["sc_precision"], d["sc_recall"], d["sc_iou"], classes, d["ssc_miou"])


def _ratio(num, den, empty):
    return float(num) / float(den) if den > 0 else empty


def evaluate(pred_labels, gt: SemanticLabelGrid, masks: VisibilityMasks):
    """Score a prediction against ground truth.

    SC: binary occupancy over occluded, in-frustum, annotated voxels.
    SSC: per-class IoU over (surface or occluded), in-frustum, annotated
    voxels; classes missing from both prediction and ground truth are
    reported as None and left out of the mean over classes 1..N.
    """
    pred = np.asarray(getattr(pred_labels, "labels", pred_labels))
    g = gt.labels
    if pred.shape != g.shape:
        raise ValueError(f"prediction dims {pred.shape} != ground truth dims {g.shape}")
    for name in ("frustum", "surface", "occluded"):
        if getattr(masks, name).shape != g.shape:
            raise ValueError(f"{name} mask dims do not match ground truth")
    known = g != IGNORE

    sc = masks.occluded & masks.frustum & known
    gt_occ = (g > 0) & sc
    pr_occ = (pred > 0) & (pred != IGNORE) & sc
    tp = np.count_nonzero(gt_occ & pr_occ)
    n_pred, n_gt = np.count_nonzero(pr_occ), np.count_nonzero(gt_occ)
    union = np.count_nonzero(gt_occ | pr_occ)
    precision = _ratio(tp, n_pred, 1.0 if n_gt == 0 else 0.0)
    recall = _ratio(tp, n_gt, 1.0 if n_pred == 0 else 0.0)
    iou = _ratio(tp, union, 1.0)

    ssc = (masks.surface | masks.occluded) & masks.frustum & known
    per_class = {}
    for c in range(1, gt.num_classes):
        p_c = (pred == c) & ssc
        g_c = (g == c) & ssc
        u = np.count_nonzero(p_c | g_c)
        per_class[c] = None if u == 0 else np.count_nonzero(p_c & g_c) / u
    present = [v for v in per_class.values() if v is not None]
    miou = float(np.mean(present)) if present else 1.0
    return EvalReport(precision, recall, iou, per_class, miou)


def mean_report(reports):
    """Arithmetic mean of per-sample reports; per-class means skip samples lacking the class."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    classes = sorted(set().union(*[r.ssc_iou for r in reports]))
    per_class = {}
    for c in classes:
        vals = [r.ssc_iou.get(c) for r in reports if r.ssc_iou.get(c) is not None]
        per_class[c] = float(np.mean(vals)) if vals else None
    return EvalReport(
        float(np.mean([r.sc_precision for r in reports])),
        float(np.mean([r.sc_recall for r in reports])),
        float(np.mean([r.sc_iou for r in reports])),
        per_class,
        float(np.mean([r.ssc_miou for r in reports])),
    )
