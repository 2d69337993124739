"""Weak-annotation regimes: one point per class, a random fraction, and
super-point regions.

Sampling uses SplitMix64 so that labelled sets are reproducible bit for bit
across platforms and numpy versions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import UNLABELED, atomic_path

ONE_POINT = "ONE_POINT"
FRACTION = "FRACTION"
SUPERPOINT = "SUPERPOINT"
SCHEMES = (ONE_POINT, FRACTION, SUPERPOINT)

DEFAULT_SPT_RADIUS = 0.5
DEFAULT_SPT_BUDGET = 0.001

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood): golden-gamma increment
    0x9E3779B97F4A7C15 with mixing multipliers 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n):
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - (1 << 64) % n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample(self, n, m):
        """m distinct values from range(n), via a partial Fisher-Yates shuffle."""
        pool = list(range(n))
        for i in range(m):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:m]


@dataclass
class WeakLabelSet:
    labeled_indices: np.ndarray
    scheme: str
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = np.asarray(self.labeled_indices, dtype=np.int64)
        if idx.ndim != 1 or (len(idx) > 1 and not (np.diff(idx) > 0).all()):
            raise ValueError("labeled_indices must be strictly increasing")
        if len(idx) and idx[0] < 0:
            raise ValueError("labeled_indices must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.labeled_indices = idx

    def __len__(self):
        return len(self.labeled_indices)

    def check(self, cloud):
        if len(self.labeled_indices) and self.labeled_indices[-1] >= len(cloud):
            raise ValueError(
                f"labelled index {self.labeled_indices[-1]} out of range for {len(cloud)} points"
            )

    def save(self, path):
        head = [f"scheme={self.scheme}"]
        head += [f"{k}={v!r}" for k, v in sorted(self.params.items())]
        head.append(f"seed={self.seed}")
        with atomic_path(path) as tmp, open(tmp, "w") as f:
            f.write("# " + " ".join(head) + "\n")
            for i in self.labeled_indices:
                f.write(f"{i}\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            first = f.readline()
            if not first.startswith("#"):
                raise ValueError(f"{path}: missing header line")
            meta = dict(tok.split("=", 1) for tok in first[1:].split())
            idx = [int(line) for line in f if line.strip()]
        scheme = meta.pop("scheme")
        seed = int(meta.pop("seed"))
        params = {}
        for k, v in meta.items():
            params[k] = float(v) if "." in v or "e" in v else int(v)
        return cls(np.asarray(idx, dtype=np.int64), scheme, seed, params)


def _labels(cloud):
    if cloud.labels is None:
        raise ValueError("cloud has no labels")
    if (cloud.labels == UNLABELED).any():
        raise ValueError("cloud must be fully labelled")
    return cloud.labels


def sample_one_point(cloud, seed):
    """One uniformly drawn point for every class present in the cloud."""
    labels = _labels(cloud)
    rng = SplitMix64(seed)
    chosen = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        chosen.append(int(members[rng.below(len(members))]))
    return WeakLabelSet(np.sort(chosen), ONE_POINT, seed)


def sample_fraction(cloud, fraction, seed):
    """ceil(fraction * N) points drawn uniformly without replacement."""
    _labels(cloud)
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(cloud)
    # round first so 0.01 * 50000 does not become 501 through representation error
    m = math.ceil(round(fraction * n, 9))
    if m < 1:
        raise ValueError("fraction * N must be at least 1")
    chosen = SplitMix64(seed).sample(n, m)
    return WeakLabelSet(np.sort(chosen), FRACTION, seed, {"fraction": float(fraction)})


def sample_superpoint(cloud, index, num_regions=None, radius=DEFAULT_SPT_RADIUS, seed=0):
    """Label every point inside fixed-radius balls around random seed points.

    With ``num_regions=None`` regions are added until at least 0.1% of the
    points are labelled.
    """
    _labels(cloud)
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot sample regions from an empty cloud")
    if not radius > 0:
        raise ValueError("radius must be positive")
    if len(index) != n:
        raise ValueError("index does not match the cloud")
    rng = SplitMix64(seed)
    order = list(range(n))
    labeled = np.zeros(n, dtype=bool)
    budget = max(1, math.ceil(DEFAULT_SPT_BUDGET * n))
    regions = 0
    while True:
        if num_regions is not None and regions >= num_regions:
            break
        if num_regions is None and labeled.sum() >= budget:
            break
        if regions >= n:
            if num_regions is not None:
                raise ValueError(f"num_regions={num_regions} exceeds the number of points")
            break
        # next distinct seed point: one step of a Fisher-Yates shuffle
        j = regions + rng.below(n - regions)
        order[regions], order[j] = order[j], order[regions]
        labeled[index.within_radius(index.points[order[regions]], radius)] = True
        regions += 1
    params = {"regions": regions, "radius": float(radius)}
    return WeakLabelSet(np.flatnonzero(labeled), SUPERPOINT, seed, params)


def apply(cloud, weak):
    """Label vector with ground truth at labelled indices, UNLABELED elsewhere."""
    weak.check(cloud)
    labels = np.full(len(cloud), UNLABELED, dtype=np.int64)
    labels[weak.labeled_indices] = _labels(cloud)[weak.labeled_indices]
    return labels
