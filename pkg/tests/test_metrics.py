import json
from fractions import Fraction

import numpy as np
import pytest

from wsseg.metrics import confusion, miou, oa, report, write_report


def test_hand_case():
    cm = confusion([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 2]]
    iou, mean = miou(cm)
    assert iou.tolist() == [0.5, 2 / 3]
    assert mean == float(Fraction(7, 12))
    assert oa(cm) == 0.75


def test_perfect():
    y = np.array([0, 1, 2, 2, 1])
    rep = report(y, y, 3)
    assert rep["miou"] == 1.0 and rep["oa"] == 1.0


def test_unlabeled_ground_truth_skipped():
    cm = confusion([0, 1, 1], [0, -1, 1], 2)
    assert cm.sum() == 2


def test_absent_class_is_nan():
    iou, mean = miou(confusion([0, 0], [0, 0], 3))
    assert iou[0] == 1.0 and np.isnan(iou[1]) and np.isnan(iou[2])
    assert mean == 1.0


def test_out_of_range():
    with pytest.raises(ValueError, match="pred class 3"):
        confusion([3], [0], 3)
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 3)


def test_empty():
    cm = confusion([], [], 2)
    assert oa(cm) == 0.0 and miou(cm)[1] == 0.0


def test_bounds(rng):
    for _ in range(50):
        gt = rng.integers(0, 4, 100)
        pred = rng.integers(0, 4, 100)
        rep = report(pred, gt, 4)
        assert 0 <= rep["miou"] <= 1 and 0 <= rep["oa"] <= 1
        assert sum(rep["class_counts"]) == 100


def test_report_file(tmp_path):
    write_report(report([0, 1], [0, 1], 2), tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["miou"] == 1.0
