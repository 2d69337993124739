"""Loss composition, Adam, and the pretext / weakly supervised training loops."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import model as M
from .colorspace import segmentation_features, split_pretext_channels
from .core import DEFAULT_K, UNLABELED, SpatialIndex, atomic_path
from .metrics import confusion, miou
from .pretext import EPSILON, local_color_stats, loss_pretext
from .propagation import PropagationConfig, loss_sp, propagate
from .weaklabel import apply as apply_weak

log = logging.getLogger(__name__)

LAMBDA_MODES = ("nonlinear", "constant", "off")


@dataclass(frozen=True)
class TrainConfig:
    max_epoch: int = 80
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 1
    seed: int = 0
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    warmup_epoch: int = 30
    lambda_mode: str = "nonlinear"
    constant_lambda: float = 1.0
    # centre points drawn per scene and step (labelled points always added);
    # 0 means every point
    points_per_step: int = 4096
    val_points: int = 8192
    k: int = DEFAULT_K
    dtype: str = "float64"

    def __post_init__(self):
        if self.max_epoch < 1:
            raise ValueError("max_epoch must be positive")
        # warmup_epoch >= max_epoch is allowed: propagation then never fires
        if self.warmup_epoch < 0:
            raise ValueError("warmup_epoch must be non-negative")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.points_per_step < 0 or self.val_points < 0:
            raise ValueError("point counts must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    loss_seg: float
    loss_sp: float
    lam: float
    val_miou: float
    seconds: float
    loss_pretext: float = math.nan


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    counters: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with atomic_path(path) as tmp, open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss_seg", "loss_sp", "lambda", "val_miou", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss_seg), repr(r.loss_sp), repr(r.lam),
                            repr(r.val_miou), f"{r.seconds:.3f}"])


def lambda_schedule(epoch, max_epoch, warmup_epoch=30):
    """0 before ``warmup_epoch``, then exp(epoch / max_epoch - 1)."""
    if max_epoch <= 0:
        raise ValueError("max_epoch must be positive")
    if not 0 <= epoch <= max_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {max_epoch}]")
    if epoch < warmup_epoch:
        return 0.0
    return math.exp(epoch / max_epoch - 1.0)


def lambda_for(config, epoch):
    if config.lambda_mode == "off":
        return 0.0
    if config.lambda_mode == "constant":
        return config.constant_lambda if epoch >= config.warmup_epoch else 0.0
    return lambda_schedule(epoch, config.max_epoch, config.warmup_epoch)


def loss_seg(logits, labels):
    """Mean softmax cross-entropy; returns ``(loss, grad wrt logits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    m = len(logits)
    if m == 0:
        raise ValueError("no labeled points in batch")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(m)
    loss = float((lse - shifted[rows, labels]).sum() / m)
    grad = np.exp(shifted - lse[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / m


def loss_total(loss_seg_val, loss_sp_val, lam):
    return loss_seg_val + lam * loss_sp_val


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, config):
    """Bias-corrected Adam update of ``params`` in place.

    Parameters without a gradient entry are left untouched.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        if g.shape != params[name].shape:
            raise M.ShapeError(f"gradient for {name} has shape {g.shape}")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params.tensors[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    params.bump()
    return params, state


# --------------------------------------------------------------------------
# per-scene caches


class PreparedScene:
    """Geometry- and color-derived inputs that do not depend on parameters."""

    def __init__(self, cloud, k=DEFAULT_K, index=None):
        self.cloud = cloud
        self.k = k
        self.index = index if index is not None else SpatialIndex(cloud.positions, k_default=k)
        self._pretext = None
        self._seg = None

    def __len__(self):
        return len(self.cloud)

    @property
    def pretext(self):
        """(features, ab_targets, stat columns)."""
        if self._pretext is None:
            feats, ab = split_pretext_channels(self.cloud)
            stats = local_color_stats(ab, self.index, min(self.k, len(self.cloud)), EPSILON)
            self._pretext = (feats, ab, stats.as_columns())
        return self._pretext

    @property
    def seg_features(self):
        if self._seg is None:
            self._seg = segmentation_features(self.cloud)
        return self._seg


def _prepare(scenes, k):
    return [s if isinstance(s, PreparedScene) else PreparedScene(s, k) for s in scenes]


def _draw(rng, n, size):
    if size == 0 or size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def _accumulate(total, grads, scale):
    for name, g in grads.items():
        if name in total:
            total[name] += g * scale
        else:
            total[name] = g * scale


# --------------------------------------------------------------------------
# training loops


def train_pretext(scenes, config=TrainConfig(), params=None, num_classes=None):
    """Colorization pretraining. Returns ``(params, history)``; the history
    carries the mean pretext loss of each epoch."""
    scenes = _prepare(scenes, config.k)
    if not scenes:
        raise ValueError("no scenes")
    rng = np.random.default_rng(config.seed)
    if params is None:
        c = num_classes or max(scenes[0].cloud.num_classes, 2)
        params = M.init_params(c, seed=config.seed, heads=(M.PRETEXT,))
    params = params.astype(config.dtype)
    state = AdamState()
    history = TrainHistory()
    for epoch in range(config.max_epoch):
        t0 = time.perf_counter()
        order = rng.permutation(len(scenes))
        losses = []
        for s in range(0, len(order), config.batch):
            group = order[s:s + config.batch]
            total = {}
            for j in group:
                scene = scenes[j]
                feats, ab, stats = scene.pretext
                centers = _draw(rng, len(scene), config.points_per_step)
                _, pred, cache = M.forward(params, feats, scene.index, M.PRETEXT, centers, config.k)
                loss, g = loss_pretext(pred.astype(np.float64), ab[centers], stats[centers])
                losses.append(loss)
                _accumulate(total, M.backward(cache, g), 1.0 / len(group))
            adam_step(params, total, state, config)
        history.records.append(EpochRecord(
            epoch, math.nan, math.nan, 0.0, math.nan,
            time.perf_counter() - t0, float(np.mean(losses)),
        ))
        log.info("pretext epoch %d loss %.5f", epoch, history.records[-1].loss_pretext)
    return params, history


def evaluate(params, scene, centers=None, k=DEFAULT_K):
    """Predicted class per point (or per ``centers`` row)."""
    if centers is None:
        _, probs = M.predict(params, scene.seg_features, scene.index, M.SEG, k=k)
        return probs.argmax(axis=1)
    preds = []
    for s in range(0, len(centers), 8192):
        _, out, _ = M.forward(params, scene.seg_features, scene.index, M.SEG, centers[s:s + 8192], k)
        preds.append(out.probs.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def validation_miou(params, val_scenes, subsets=None, k=DEFAULT_K):
    if not val_scenes:
        return math.nan
    C = params.num_classes
    cm = np.zeros((C, C), dtype=np.int64)
    for i, scene in enumerate(val_scenes):
        centers = None if subsets is None else subsets[i]
        gt = scene.cloud.labels if centers is None else scene.cloud.labels[centers]
        cm += confusion(evaluate(params, scene, centers, k), gt, C)
    return miou(cm)[1]


def train_weak(scenes, weak_labels, init=None, config=TrainConfig(), val_scenes=()):
    """Weakly supervised fine-tuning with sparse label propagation.

    ``init`` is a parameter set with a segmentation head (e.g. from
    :func:`wsseg.model.transfer_encoder`); None trains from scratch.
    Returns ``(params, history)``.
    """
    scenes = _prepare(scenes, config.k)
    val_scenes = _prepare(val_scenes, config.k)
    if len(weak_labels) != len(scenes):
        raise ValueError("need one weak label set per scene")
    C = max(s.cloud.num_classes for s in scenes)
    if init is None:
        params = M.init_params(C, seed=config.seed, heads=(M.SEG,))
    else:
        if not init.has_head(M.SEG):
            raise M.ShapeError("initial parameters have no segmentation head")
        params = init.copy()
    params = params.astype(config.dtype)
    C = params.num_classes

    history = TrainHistory(counters={"skipped_scenes": 0, "log_clamp": 0})
    labeled = []
    for scene, weak in zip(scenes, weak_labels):
        lab = apply_weak(scene.cloud, weak)
        idx = np.flatnonzero(lab != UNLABELED)
        if len(idx) == 0:
            history.counters["skipped_scenes"] += 1
            log.warning("scene without labelled points skipped")
        labeled.append((idx, lab[idx]))
    active = [i for i, (idx, _) in enumerate(labeled) if len(idx)]
    if not active:
        raise ValueError("no scene has labelled points")

    val_rng = np.random.default_rng([config.seed, 1])
    subsets = [_draw(val_rng, len(s), config.val_points) for s in val_scenes]

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    for epoch in range(config.max_epoch):
        t0 = time.perf_counter()
        lam = lambda_for(config, epoch)
        order = [active[i] for i in rng.permutation(len(active))]
        seg_losses, sp_losses = [], []
        for s in range(0, len(order), config.batch):
            group = order[s:s + config.batch]
            total = {}
            for j in group:
                scene = scenes[j]
                idx_l, y_l = labeled[j]
                centers = _draw(rng, len(scene), config.points_per_step)
                centers = np.setdiff1d(centers, idx_l, assume_unique=True)
                batch = np.concatenate([idx_l, centers])
                m = len(idx_l)
                z, out, cache = M.forward(params, scene.seg_features, scene.index, M.SEG, batch, config.k)
                logits = out.logits.astype(np.float64)
                probs = out.probs.astype(np.float64)
                ls, g_l = loss_seg(logits[:m], y_l)
                grad = np.zeros_like(logits)
                grad[:m] = g_l
                lsp = 0.0
                if lam > 0 and len(centers):
                    z64 = z.astype(np.float64)
                    pseudo = propagate(z64[:m], y_l, z64[m:], C, config.propagation)
                    lsp, g_sp = loss_sp(pseudo, probs[m:], history.counters)
                    grad[m:] += lam * g_sp
                seg_losses.append(ls)
                sp_losses.append(lsp)
                _accumulate(total, M.backward(cache, grad), 1.0 / len(group))
            adam_step(params, total, state, config)
        val = validation_miou(params, val_scenes, subsets, config.k)
        history.records.append(EpochRecord(
            epoch, float(np.mean(seg_losses)), float(np.mean(sp_losses)), lam, val,
            time.perf_counter() - t0,
        ))
        log.info("weak epoch %d seg %.4f sp %.4f lambda %.3f val %.4f",
                 epoch, seg_losses[-1], sp_losses[-1], lam, val)
    return params, history
