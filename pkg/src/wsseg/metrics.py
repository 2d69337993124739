"""Confusion matrix, IoU and overall accuracy."""

import json
from fractions import Fraction

import numpy as np

from .core import UNLABELED, atomic_path


def confusion(pred, gt, num_classes):
    """C x C counts, rows ground truth, columns prediction.

    Points whose ground truth is UNLABELED are skipped.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("pred and gt differ in length")
    keep = gt != UNLABELED
    pred, gt = pred[keep], gt[keep]
    for name, v in (("pred", pred), ("gt", gt)):
        bad = (v < 0) | (v >= num_classes)
        if bad.any():
            raise ValueError(f"{name} class {v[bad][0]} outside [0, {num_classes})")
    return np.bincount(gt * num_classes + pred, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def miou(cm):
    """Per-class IoU and their mean over classes that occur in gt or pred.

    Classes with no support get IoU nan and are left out of the mean. The
    mean is formed from exact count ratios, so it is the correctly rounded
    value (7/12 comes out as the float nearest 7/12).
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    supported = denom > 0
    iou = np.full(len(cm), np.nan)
    iou[supported] = tp[supported] / denom[supported]
    ratios = [Fraction(int(t), int(d)) for t, d in zip(tp[supported], denom[supported])]
    mean = float(sum(ratios) / len(ratios)) if ratios else 0.0
    return iou, mean


def oa(cm):
    cm = np.asarray(cm)
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def report(pred, gt, num_classes):
    cm = confusion(pred, gt, num_classes)
    iou, mean = miou(cm)
    return {
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "miou": mean,
        "oa": oa(cm),
        "num_points": int(cm.sum()),
        "class_counts": cm.sum(axis=1).tolist(),
    }


def write_report(rep, path):
    with atomic_path(path) as tmp, open(tmp, "w") as f:
        json.dump(rep, f, indent=2)
        f.write("\n")
