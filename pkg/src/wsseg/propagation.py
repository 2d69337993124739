"""Prototype-based sparse label propagation.

Every class with at least one labelled embedding gets a prototype (the mean
labelled embedding). Unlabelled embeddings are scored against the
prototypes, the scores are softmax-normalised per point, and for each class
only the ``k_top`` highest-scoring points become pseudo-labelled. Everything
here is O(N * C * d) time and O(N * C) extra memory.

Columns of the N x C_present matrices follow ascending class id over the
present classes only.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

LOG_CLAMP = 1e-12
SIGMA_SAMPLE = 1024
DENSE_MAX_POINTS = 20000


class Prototypes(NamedTuple):
    rho: np.ndarray  # C x d, zero rows where absent
    present: np.ndarray  # C booleans

    @property
    def classes(self):
        return np.flatnonzero(self.present)


@dataclass(frozen=True)
class PropagationConfig:
    sigma: Optional[float] = None  # None: adaptive, see default_sigma
    k_top: int = 32
    enabled_after_epoch: int = 30

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.k_top < 1:
            raise ValueError("k_top must be at least 1")


@dataclass
class PseudoLabelSet:
    """Sparse soft labels over N unlabelled points.

    ``indices`` are the rows with ``point_mask`` set, ascending;
    ``soft_labels[j]`` (length C, zero on absent classes) and
    ``chosen_class[j]`` belong to point ``indices[j]``.
    """

    point_mask: np.ndarray
    soft_labels: np.ndarray
    chosen_class: np.ndarray

    @property
    def indices(self):
        return np.flatnonzero(self.point_mask)

    def __len__(self):
        return int(self.point_mask.sum())

    def dense(self):
        """N x C matrix equal to the mask-weighted assignment (zero rows off-mask)."""
        out = np.zeros((len(self.point_mask), self.soft_labels.shape[1]))
        out[self.point_mask] = self.soft_labels
        return out

    def save(self, path, index_map=None):
        """Write ``index chosen_class p_0 ... p_{C-1}`` lines.

        ``index_map`` translates unlabelled-row numbers to point ids in the
        original cloud.
        """
        from .core import atomic_path

        rows = self.indices if index_map is None else np.asarray(index_map)[self.indices]
        with atomic_path(path) as tmp, open(tmp, "w") as f:
            for i, c, p in zip(rows, self.chosen_class, self.soft_labels):
                f.write(f"{i} {c} " + " ".join(repr(float(v)) for v in p) + "\n")


def load_pseudo_labels(path):
    """Read a file written by :meth:`PseudoLabelSet.save` as (index, class, probs)."""
    idx, cls, probs = [], [], []
    with open(path) as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            idx.append(int(tok[0]))
            cls.append(int(tok[1]))
            probs.append([float(t) for t in tok[2:]])
    return np.asarray(idx, dtype=np.int64), np.asarray(cls, dtype=np.int64), np.asarray(probs)


def compute_prototypes(z_labeled, labels, num_classes):
    z = np.asarray(z_labeled, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(z) == 0:
        raise ValueError("no labeled points")
    if len(labels) != len(z):
        raise ValueError("labels and embeddings disagree in length")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    sums = np.zeros((num_classes, z.shape[1]))
    np.add.at(sums, labels, z)
    present = counts > 0
    rho = np.zeros_like(sums)
    rho[present] = sums[present] / counts[present, None]
    return Prototypes(rho, present)


def _sq_dist_to_prototypes(z_u, rho):
    out = np.empty((len(z_u), len(rho)))
    for j, r in enumerate(rho):
        diff = z_u - r
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def similarity_matrix(z_unlabeled, prototypes, sigma):
    """W[i, c] = exp(-|z_i - rho_c|^2 / sigma) over present classes."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not prototypes.present.any():
        raise ValueError("no present class")
    z = np.asarray(z_unlabeled, dtype=np.float64)
    d2 = _sq_dist_to_prototypes(z, prototypes.rho[prototypes.present])
    return np.exp(-d2 / sigma)


def default_sigma(z_unlabeled, prototypes, sample=SIGMA_SAMPLE):
    """Mean nearest-prototype squared distance over an evenly strided sample
    of at most ``sample`` unlabelled points (1.0 if that mean is zero)."""
    z = np.asarray(z_unlabeled, dtype=np.float64)
    if len(z) == 0:
        return 1.0
    step = max(1, -(-len(z) // sample))
    d2 = _sq_dist_to_prototypes(z[::step][:sample], prototypes.rho[prototypes.present])
    s = float(d2.min(axis=1).mean())
    return s if s > 0 else 1.0


def class_assignment(W):
    """Row-wise softmax of the similarity matrix."""
    W = np.asarray(W, dtype=np.float64)
    e = np.exp(W - W.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def topk_mask(S, k_top):
    """Per column, mark the ``k_top`` largest rows (lower row wins ties)."""
    if k_top < 1:
        raise ValueError("k_top must be at least 1")
    S = np.asarray(S)
    n, c = S.shape
    mask = np.zeros((n, c), dtype=bool)
    k = min(k_top, n)
    if k == n:
        mask[:] = True
        return mask
    for j in range(c):
        col = S[:, j]
        kth = np.partition(col, n - k)[n - k]
        above = col > kth
        mask[above, j] = True
        ties = np.flatnonzero(col == kth)[: k - int(above.sum())]
        mask[ties, j] = True
    return mask


def point_mask(Mk, S):
    """Collapse the per-class mask to a per-point mask.

    Returns ``(mask, chosen)`` where ``chosen[i]`` is the selected column
    with the largest S (lowest column on ties) or -1 when row i is unmasked.
    """
    Mk = np.asarray(Mk, dtype=bool)
    S = np.asarray(S)
    if Mk.shape != S.shape:
        raise ValueError("mask and assignment shapes differ")
    mask = Mk.any(axis=1)
    masked_s = np.where(Mk, S, -np.inf)
    chosen = np.where(mask, masked_s.argmax(axis=1), -1)
    return mask, chosen


def sparse_pseudo_labels(mask, S, chosen=None, present=None):
    """Copy the assignment rows of masked points into a :class:`PseudoLabelSet`.

    ``present`` (length C booleans) widens rows from the present-class
    columns to all C classes; ``chosen`` (from :func:`point_mask`) is mapped
    to class ids the same way. Without ``chosen`` the arg-max column is used.
    """
    mask = np.asarray(mask, dtype=bool)
    S = np.asarray(S, dtype=np.float64)
    if len(mask) != len(S):
        raise ValueError("mask and assignment lengths differ")
    if present is None:
        present = np.ones(S.shape[1], dtype=bool)
    cols = np.flatnonzero(present)
    if len(cols) != S.shape[1]:
        raise ValueError("present mask does not match assignment columns")
    rows = S[mask]
    soft = np.zeros((len(rows), len(present)))
    soft[:, cols] = rows
    if chosen is None:
        picked = rows.argmax(axis=1) if len(rows) else np.zeros(0, dtype=np.int64)
    else:
        picked = np.asarray(chosen)[mask]
    return PseudoLabelSet(mask, soft, cols[picked].astype(np.int64))


def loss_sp(pseudo, probs_u, counter=None):
    """Soft-target cross-entropy over pseudo-labelled rows.

    Returns ``(loss, grad)`` where grad is N x C with respect to the
    pre-softmax logits that produced ``probs_u``. Probabilities below 1e-12
    under a positive target are clamped; each clamp increments
    ``counter["log_clamp"]`` when a counter mapping is supplied.
    """
    probs_u = np.asarray(probs_u)
    grad = np.zeros_like(probs_u)
    m = len(pseudo)
    if m == 0:
        return 0.0, grad
    if probs_u.shape != (len(pseudo.point_mask), pseudo.soft_labels.shape[1]):
        raise ValueError(f"probabilities of shape {probs_u.shape} do not match the pseudo labels")
    idx = pseudo.indices
    y = pseudo.soft_labels
    p = probs_u[idx]
    small = (p < LOG_CLAMP) & (y > 0)
    if small.any() and counter is not None:
        counter["log_clamp"] = counter.get("log_clamp", 0) + int(small.sum())
    logp = np.log(np.maximum(p, LOG_CLAMP))
    loss = -float((y * logp).sum()) / m
    grad[idx] = (p * y.sum(axis=1, keepdims=True) - y) / m
    return loss, grad


def propagate(z_labeled, labels, z_unlabeled, num_classes, config=None):
    """Full pipeline: prototypes -> similarity -> assignment -> top-K -> pseudo labels."""
    config = config or PropagationConfig()
    protos = compute_prototypes(z_labeled, labels, num_classes)
    z_u = np.asarray(z_unlabeled, dtype=np.float64)
    sigma = config.sigma if config.sigma is not None else default_sigma(z_u, protos)
    W = similarity_matrix(z_u, protos, sigma)
    S = class_assignment(W)
    Mk = topk_mask(S, config.k_top)
    mask, chosen = point_mask(Mk, S)
    return sparse_pseudo_labels(mask, S, chosen, protos.present)


def dense_graph_propagate(z_labeled, labels, z_unlabeled, num_classes, sigma=None,
                          alpha=0.99, iterations=3, block=1024):
    """Fully connected graph label spreading, the O((N+M)^2 d) baseline.

    Affinities exp(-|z_i - z_j|^2 / sigma) are recomputed block by block on
    every sweep, so memory stays O(block * (N+M)) while the time is
    quadratic. Returns the arg-max class of each unlabelled point. Refuses
    inputs above 20000 points.
    """
    z_l = np.asarray(z_labeled, dtype=np.float64)
    z_u = np.asarray(z_unlabeled, dtype=np.float64)
    n = len(z_l) + len(z_u)
    if n > DENSE_MAX_POINTS:
        raise ValueError(f"dense graph propagation refused for {n} > {DENSE_MAX_POINTS} points")
    z = np.vstack([z_l, z_u])
    if sigma is None:
        sigma = default_sigma(z_u, compute_prototypes(z_l, labels, num_classes))
    sq = np.einsum("ij,ij->i", z, z)
    Y = np.zeros((n, num_classes))
    Y[np.arange(len(z_l)), labels] = 1.0

    def sweep(F):
        # returns W @ F (zero diagonal) without materialising W
        out = np.empty_like(F)
        for s in range(0, n, block):
            e = min(s + block, n)
            d2 = sq[s:e, None] + sq[None, :] - 2.0 * (z[s:e] @ z.T)
            w = np.exp(-np.maximum(d2, 0.0) / sigma)
            w[np.arange(e - s), np.arange(s, e)] = 0.0
            out[s:e] = w @ F
        return out

    deg = sweep(np.ones((n, 1)))[:, 0]
    inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    F = Y.copy()
    for _ in range(iterations):
        F = alpha * inv_sqrt[:, None] * sweep(inv_sqrt[:, None] * F) + (1 - alpha) * Y
    return F[len(z_l):].argmax(axis=1)
