import math
from dataclasses import replace

import numpy as np
import pytest

from wsseg import model as M
from wsseg.core import PointCloud, SceneSpec, generate_scene
from wsseg.propagation import PropagationConfig
from wsseg.training import (
    AdamState,
    PreparedScene,
    TrainConfig,
    adam_step,
    evaluate,
    lambda_for,
    lambda_schedule,
    loss_seg,
    loss_total,
    train_pretext,
    train_weak,
)
from wsseg.metrics import confusion, miou
from wsseg.weaklabel import WeakLabelSet, sample_one_point

from conftest import central_diff, rel_err

FAST = dict(points_per_step=512, val_points=512)


class TestLambda:
    def test_values(self):
        assert all(lambda_schedule(e, 80, 30) == 0.0 for e in range(30))
        assert abs(lambda_schedule(30, 80, 30) - math.exp(-0.625)) <= 1e-12
        assert lambda_schedule(80, 80, 30) == 1.0

    def test_monotone_and_bounded(self):
        vals = [lambda_schedule(e, 80, 30) for e in range(81)]
        assert all(0 <= v <= 1 for v in vals)
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_rejections(self):
        with pytest.raises(ValueError):
            lambda_schedule(0, 0)
        with pytest.raises(ValueError):
            lambda_schedule(81, 80)

    def test_modes(self):
        cfg = TrainConfig(lambda_mode="constant", warmup_epoch=0)
        assert lambda_for(cfg, 0) == 1.0
        assert lambda_for(replace(cfg, lambda_mode="off"), 79) == 0.0


class TestLossSeg:
    def test_uniform(self):
        loss, _ = loss_seg(np.zeros((5, 4)), [0, 1, 2, 3, 0])
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_confident(self):
        logits = np.zeros((3, 4))
        logits[np.arange(3), [2, 0, 1]] = 20.0
        assert loss_seg(logits, [2, 0, 1])[0] < 1e-8

    def test_empty(self):
        with pytest.raises(ValueError, match="no labeled points in batch"):
            loss_seg(np.zeros((0, 3)), [])

    def test_finite_differences(self, rng):
        for _ in range(20):
            logits = rng.normal(size=(7, 4)) * 2
            y = rng.integers(0, 4, 7)
            _, g = loss_seg(logits, y)
            assert rel_err(g, central_diff(lambda x: loss_seg(x, y)[0], logits)) < 1e-5

    def test_total(self):
        assert loss_total(1.0, 0.5, 1.0) == 1.5
        assert loss_total(0.7, 123.0, 0.0) == 0.7
        vals = [loss_total(1.0, 0.5, lam) for lam in (0.0, 0.5, 1.0)]
        assert vals[1] - vals[0] == pytest.approx(vals[2] - vals[1])


class TestAdam:
    def _params(self, value):
        return M.ModelParams({"w": np.array([value])})

    def test_first_step(self):
        cfg = TrainConfig()
        p, _ = adam_step(self._params(0.0), {"w": np.array([1.0])}, AdamState(), cfg)
        assert p["w"][0] == pytest.approx(-cfg.learning_rate, rel=1e-6)

    def test_zero_gradient(self):
        p, _ = adam_step(self._params(2.0), {"w": np.array([0.0])}, AdamState(), TrainConfig())
        assert p["w"][0] == 2.0

    def test_deterministic(self):
        outs = []
        for _ in range(2):
            p, st = self._params(1.0), AdamState()
            for g in (0.3, -1.2, 0.7):
                adam_step(p, {"w": np.array([g])}, st, TrainConfig())
            outs.append(p["w"][0])
        assert outs[0] == outs[1]

    def test_nan_names_parameter(self):
        with pytest.raises(FloatingPointError, match="w"):
            adam_step(self._params(0.0), {"w": np.array([np.nan])}, AdamState(), TrainConfig())

    def test_bumps_version(self):
        p = self._params(0.0)
        v = p.version
        adam_step(p, {"w": np.array([1.0])}, AdamState(), TrainConfig())
        assert p.version != v


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(max_epoch=0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_epoch=-1)
    with pytest.raises(ValueError):
        TrainConfig(lambda_mode="cosine")


@pytest.fixture(scope="module")
def tiny():
    return [PreparedScene(generate_scene(SceneSpec(num_points=1500, seed=s))) for s in (21, 22)]


class TestPretext:
    def test_one_epoch(self):
        scene = generate_scene(SceneSpec(num_points=500, seed=1))
        _, hist = train_pretext([scene], TrainConfig(max_epoch=1))
        assert len(hist) == 1 and np.isfinite(hist.records[0].loss_pretext)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_overfit_one_scene(self, seed):
        scene = PreparedScene(generate_scene(SceneSpec(num_points=1500, seed=seed)))
        _, hist = train_pretext([scene], TrainConfig(max_epoch=30, seed=seed, points_per_step=0))
        losses = hist.column("loss_pretext")
        assert losses[-1] < losses[0]

    def test_deterministic(self, tiny):
        cfg = TrainConfig(max_epoch=2, **FAST)
        a, ha = train_pretext(tiny, cfg)
        b, hb = train_pretext(tiny, cfg)
        assert all(np.array_equal(a[n], b[n]) for n in a.names())
        assert np.array_equal(ha.column("loss_pretext"), hb.column("loss_pretext"))

    def test_colorization_error_halves(self):
        scene = PreparedScene(generate_scene(SceneSpec(num_points=2000, color_noise=0.05, seed=5)))
        feats, ab, _ = scene.pretext
        labels = scene.cloud.labels

        def class_error(params):
            _, pred = M.predict(params, feats, scene.index, M.PRETEXT)
            err = np.abs(pred[:, :2] - ab).sum(axis=1)
            return np.mean([err[labels == c].mean() for c in np.unique(labels)])

        cfg = TrainConfig(points_per_step=0, learning_rate=3e-3)
        first, _ = train_pretext([scene], replace(cfg, max_epoch=1))
        final, _ = train_pretext([scene], replace(cfg, max_epoch=300))
        assert class_error(final) <= 0.5 * class_error(first)


class TestWeak:
    def test_baseline_equivalence(self, tiny):
        weak = [sample_one_point(s.cloud, i) for i, s in enumerate(tiny)]
        cfg = TrainConfig(max_epoch=3, warmup_epoch=3, **FAST)
        a, ha = train_weak(tiny, weak, None, cfg, tiny[:1])
        b, hb = train_weak(tiny, weak, None, replace(cfg, lambda_mode="off"), tiny[:1])
        assert all(np.array_equal(a[n], b[n]) for n in a.names())
        assert np.array_equal(ha.column("val_miou"), hb.column("val_miou"))
        assert (ha.column("loss_sp") == 0).all()

    def test_history_and_determinism(self, tiny, tmp_path):
        weak = [sample_one_point(s.cloud, i) for i, s in enumerate(tiny)]
        cfg = TrainConfig(max_epoch=4, warmup_epoch=1, **FAST)
        _, ha = train_weak(tiny, weak, None, cfg, tiny[:1])
        _, hb = train_weak(tiny, weak, None, cfg, tiny[:1])
        assert len(ha) == 4
        assert ha.column("lam")[0] == 0 and (ha.column("lam")[1:] > 0).all()
        assert (ha.column("loss_sp")[1:] > 0).all()
        for col in ("loss_seg", "loss_sp", "val_miou"):
            assert np.array_equal(ha.column(col), hb.column(col))
        ha.to_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss_seg,loss_sp,lambda,val_miou,seconds"
        assert len(lines) == 5

    def test_skips_unlabeled_scene(self, tiny):
        weak = [sample_one_point(tiny[0].cloud, 0), WeakLabelSet(np.zeros(0, np.int64), "FRACTION", 0)]
        _, hist = train_weak(tiny, weak, None, TrainConfig(max_epoch=1, **FAST))
        assert hist.counters["skipped_scenes"] == 1

    def test_no_labels_anywhere(self, tiny):
        empty = [WeakLabelSet(np.zeros(0, np.int64), "FRACTION", 0)] * 2
        with pytest.raises(ValueError):
            train_weak(tiny, empty, None, TrainConfig(max_epoch=1, **FAST))

    def test_requires_seg_head(self, tiny):
        weak = [sample_one_point(s.cloud, i) for i, s in enumerate(tiny)]
        with pytest.raises(M.ShapeError):
            train_weak(tiny, weak, M.init_params(4, heads=(M.PRETEXT,)), TrainConfig(max_epoch=1))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_two_class_toy(self, seed):
        rng = np.random.default_rng(seed)
        n = 1000
        pos = np.vstack([rng.uniform(0, 1, (n, 3)), rng.uniform(0, 1, (n, 3)) + [3.0, 0, 0]])
        col = np.vstack([np.tile([0.9, 0.1, 0.1], (n, 1)), np.tile([0.1, 0.2, 0.9], (n, 1))])
        col = np.clip(col + rng.normal(0, 0.03, col.shape), 0, 1)
        cloud = PointCloud(pos, col, np.r_[np.zeros(n, int), np.ones(n, int)], 2)
        scene = PreparedScene(cloud)
        weak = [sample_one_point(cloud, seed)]
        cfg = TrainConfig(max_epoch=40, warmup_epoch=20, seed=seed, points_per_step=0,
                          propagation=PropagationConfig(k_top=32), val_points=0)
        params, _ = train_weak([scene], weak, None, cfg)
        pred = evaluate(params, scene)
        assert miou(confusion(pred, cloud.labels, 2))[1] > 0.9
