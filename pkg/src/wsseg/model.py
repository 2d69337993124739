"""Small point encoder with a colorization head and a segmentation head.

Per point: gather its K nearest neighbours, build a per-neighbour vector
(offset to the neighbour, its length, the neighbour's features with the
position columns also taken relative to the centre point), run a shared
two-layer ReLU MLP, max-pool over the neighbours, then a two-layer point MLP
gives the embedding Z. Heads are linear maps of Z; the segmentation head is
followed by a row softmax.

Gradients are written out by hand (no autodiff) and cached activations are
tied to the parameter version they were computed with.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import DEFAULT_K, atomic_path

PRETEXT = "pretext"
SEG = "seg"
PRETEXT_OUTPUTS = 6

IN_FEATURES = 6
HIDDEN = 32
EMBED_DIM = 16

ENCODER = ("enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.w3", "enc.b3", "enc.w4", "enc.b4")
CHECKPOINT_MAGIC = "wsseg-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass
class ModelParams:
    tensors: dict
    version: int = 0

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def has_head(self, head):
        return f"{head}.w" in self.tensors

    @property
    def num_classes(self):
        return self.tensors["seg.w"].shape[1] if self.has_head(SEG) else None

    @property
    def embed_dim(self):
        return self.tensors["enc.w4"].shape[1]

    @property
    def in_features(self):
        return self.tensors["enc.w1"].shape[0] - 4

    @property
    def dtype(self):
        return self.tensors["enc.w1"].dtype

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.version)

    def astype(self, dtype):
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()}, self.version)

    def bump(self):
        """Mark the parameters as modified in place (invalidates caches)."""
        self.version += 1


def _uniform(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(num_classes, d=EMBED_DIM, hidden=HIDDEN, seed=0, in_features=IN_FEATURES,
                heads=(PRETEXT, SEG)):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if d < 2:
        raise ValueError("embedding dimension must be at least 2")
    if hidden < 4:
        raise ValueError("hidden width must be at least 4")
    rng = np.random.default_rng(seed)
    t = {}
    dims = [("enc.w1", in_features + 4, hidden), ("enc.w2", hidden, hidden),
            ("enc.w3", hidden, hidden), ("enc.w4", hidden, d)]
    for name, fi, fo in dims:
        t[name] = _uniform(rng, fi, fo)
        t[name.replace(".w", ".b")] = np.zeros(fo)
    # the seg head is drawn after the pretext head regardless of which heads
    # are requested, so a given seed always yields the same encoder
    head_w = {PRETEXT: _uniform(rng, d, PRETEXT_OUTPUTS), SEG: _uniform(rng, d, num_classes)}
    for h in heads:
        t[f"{h}.w"] = head_w[h]
        t[f"{h}.b"] = np.zeros(head_w[h].shape[1])
    params = ModelParams(t)
    validate(params)
    return params


def validate(params):
    """Check that every tensor has a shape consistent with its neighbours."""
    t = params.tensors
    for name in ENCODER:
        if name not in t:
            raise ShapeError(f"missing tensor {name}")
    chain = [t["enc.w1"], t["enc.w2"], t["enc.w3"], t["enc.w4"]]
    for i, w in enumerate(chain, start=1):
        if w.ndim != 2:
            raise ShapeError(f"enc.w{i}: expected a matrix, got shape {w.shape}")
        b = t[f"enc.b{i}"]
        if b.shape != (w.shape[1],):
            raise ShapeError(f"enc.b{i}: expected shape {(w.shape[1],)}, got {b.shape}")
        if i > 1 and w.shape[0] != chain[i - 2].shape[1]:
            raise ShapeError(f"enc.w{i}: expected {chain[i - 2].shape[1]} input rows, got {w.shape[0]}")
    d = t["enc.w4"].shape[1]
    for h in (PRETEXT, SEG):
        if f"{h}.w" in t:
            w, b = t[f"{h}.w"], t.get(f"{h}.b")
            if w.ndim != 2 or w.shape[0] != d:
                raise ShapeError(f"{h}.w: expected {d} input rows, got shape {w.shape}")
            if b is None or b.shape != (w.shape[1],):
                raise ShapeError(f"{h}.b: expected shape {(w.shape[1],)}")
    if PRETEXT + ".w" in t and t["pretext.w"].shape[1] != PRETEXT_OUTPUTS:
        raise ShapeError(f"pretext.w: expected {PRETEXT_OUTPUTS} outputs")
    if not all(np.isfinite(v).all() for v in t.values()):
        raise ValueError("non-finite parameter")


class SegOutputs(NamedTuple):
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    head: str
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    argmax: np.ndarray
    pooled: np.ndarray
    a3: np.ndarray
    h3: np.ndarray
    z: np.ndarray
    extra: dict = field(default_factory=dict)


def softmax(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def neighbor_inputs(features, neighbors, centers, dtype=np.float64):
    """B x K x (F + 4) per-neighbour input vectors."""
    pos = features[:, :3]
    rel = pos[neighbors] - pos[centers][:, None, :]
    dist = np.sqrt(np.einsum("bkj,bkj->bk", rel, rel))[..., None]
    nf = features[neighbors]
    return np.concatenate([rel, dist, rel, nf[..., 3:]], axis=-1).astype(dtype, copy=False)


def forward(params, features, index, head, centers=None, k=DEFAULT_K):
    """Run the encoder and one head.

    ``centers`` restricts the output rows to a subset of points (their
    neighbourhoods still come from the full cloud). Returns
    ``(z, outputs, cache)``: outputs is the N x 6 pretext prediction or a
    :class:`SegOutputs` of logits and probabilities.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.in_features:
        raise ShapeError(f"features must be N x {params.in_features}, got {features.shape}")
    if len(features) != len(index):
        raise ShapeError(f"{len(features)} feature rows but the index holds {len(index)} points")
    if head not in (PRETEXT, SEG):
        raise ValueError(f"unknown head {head!r}")
    if not params.has_head(head):
        raise ShapeError(f"parameters have no {head} head")
    if centers is None:
        centers = np.arange(len(features))
    centers = np.asarray(centers, dtype=np.int64)
    t = params.tensors

    nb = index.neighbor_table(k)[centers]
    x = neighbor_inputs(features, nb, centers, params.dtype)
    a1 = x @ t["enc.w1"] + t["enc.b1"]
    h1 = np.maximum(a1, 0)
    a2 = h1 @ t["enc.w2"] + t["enc.b2"]
    h2 = np.maximum(a2, 0)
    arg = h2.argmax(axis=1)
    pooled = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
    a3 = pooled @ t["enc.w3"] + t["enc.b3"]
    h3 = np.maximum(a3, 0)
    z = h3 @ t["enc.w4"] + t["enc.b4"]
    out = z @ t[f"{head}.w"] + t[f"{head}.b"]
    cache = ForwardCache(params, params.version, head, x, a1, h1, a2, arg, pooled, a3, h3, z)
    if head == SEG:
        return z, SegOutputs(out, softmax(out)), cache
    return z, out, cache


def predict(params, features, index, head, chunk=8192, k=DEFAULT_K):
    """Forward over all points in chunks without keeping activations.

    Returns ``(z, outputs)`` with outputs the pretext prediction or the
    class probabilities.
    """
    zs, outs = [], []
    for s in range(0, len(features), chunk):
        centers = np.arange(s, min(s + chunk, len(features)))
        z, out, _ = forward(params, features, index, head, centers, k)
        zs.append(z)
        outs.append(out.probs if head == SEG else out)
    return np.vstack(zs), np.vstack(outs)


def backward(cache, grad_outputs):
    """Parameter gradients for the cached forward pass.

    ``grad_outputs`` is the gradient with respect to the head output (the
    pretext prediction, or the segmentation logits).
    """
    params = cache.params
    if params.version != cache.version:
        raise RuntimeError("stale forward cache: parameters changed since the forward pass")
    t = params.tensors
    g = np.asarray(grad_outputs, dtype=cache.z.dtype)
    head = cache.head
    if g.shape != (len(cache.z), t[f"{head}.w"].shape[1]):
        raise ShapeError(f"grad_outputs has shape {g.shape}")
    grads = {}
    grads[f"{head}.w"] = cache.z.T @ g
    grads[f"{head}.b"] = g.sum(axis=0)
    gz = g @ t[f"{head}.w"].T
    grads["enc.w4"] = cache.h3.T @ gz
    grads["enc.b4"] = gz.sum(axis=0)
    ga3 = (gz @ t["enc.w4"].T) * (cache.a3 > 0)
    grads["enc.w3"] = cache.pooled.T @ ga3
    grads["enc.b3"] = ga3.sum(axis=0)
    gpool = ga3 @ t["enc.w3"].T
    # max-pool: each channel's gradient goes to its arg-max neighbour only
    ga2 = np.zeros_like(cache.a2)
    np.put_along_axis(ga2, cache.argmax[:, None, :], gpool[:, None, :], axis=1)
    ga2 *= cache.a2 > 0
    B, K, H = ga2.shape
    ga2 = ga2.reshape(B * K, H)
    h1 = cache.h1.reshape(B * K, -1)
    grads["enc.w2"] = h1.T @ ga2
    grads["enc.b2"] = ga2.sum(axis=0)
    ga1 = (ga2 @ t["enc.w2"].T) * (cache.a1.reshape(B * K, -1) > 0)
    grads["enc.w1"] = cache.x.reshape(B * K, -1).T @ ga1
    grads["enc.b1"] = ga1.sum(axis=0)
    return grads


def transfer_encoder(pretext_params, num_classes, seed=0):
    """Segmentation parameters: copied encoder, fresh seg head, no pretext head."""
    validate(pretext_params)
    d = pretext_params.embed_dim
    hidden = pretext_params["enc.w3"].shape[1]
    fresh = init_params(num_classes, d=d, hidden=hidden, seed=seed,
                        in_features=pretext_params.in_features, heads=(SEG,))
    t = {name: pretext_params[name].copy() for name in ENCODER}
    t["seg.w"] = fresh["seg.w"].astype(pretext_params.dtype)
    t["seg.b"] = fresh["seg.b"].astype(pretext_params.dtype)
    return ModelParams(t)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params, path):
    """Text container: a magic/version line, then per tensor a line
    ``tensor NAME NDIM DIM...`` followed by one line of row-major values
    written with 17 significant digits."""
    with atomic_path(path) as tmp, open(tmp, "w") as f:
        f.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        for name, v in params.tensors.items():
            f.write(f"tensor {name} {v.ndim} {' '.join(map(str, v.shape))}\n")
            f.write(" ".join(f"{x:.17g}" for x in v.astype(np.float64).ravel()) + "\n")


def load_checkpoint(path, template=None):
    """Read a checkpoint; with ``template`` every shared tensor name must
    match its shape."""
    tensors = {}
    with open(path) as f:
        head = f.readline().split()
        if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if int(head[1]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
        while True:
            line = f.readline()
            if not line:
                break
            tok = line.split()
            if not tok:
                continue
            if tok[0] != "tensor":
                raise ValueError(f"{path}: expected a tensor line, got {line.strip()!r}")
            name, ndim = tok[1], int(tok[2])
            shape = tuple(int(s) for s in tok[3:3 + ndim])
            values = np.array(f.readline().split(), dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ShapeError(f"{name}: {values.size} values for shape {shape}")
            tensors[name] = values.reshape(shape)
    if template is not None:
        for name, v in tensors.items():
            if name in template.tensors and template[name].shape != v.shape:
                raise ShapeError(f"{name}: checkpoint shape {v.shape} != expected {template[name].shape}")
    params = ModelParams(tensors)
    validate(params)
    return params
