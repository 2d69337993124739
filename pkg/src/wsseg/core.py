"""Point-cloud container, exact kd-tree KNN index, ASCII PLY I/O and the
synthetic labelled-scene generator."""

import contextlib
import os
import tempfile
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _accel
from .colorspace import delta_e, rgb_to_lab

UNLABELED = -1
DEFAULT_K = 16


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    colors: np.ndarray
    labels: Optional[np.ndarray] = None
    num_classes: int = 1

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        col = np.ascontiguousarray(self.colors, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pos.shape}")
        if col.shape != pos.shape:
            raise ValueError(f"colors must be {pos.shape}, got {col.shape}")
        if not ((col >= 0.0) & (col <= 1.0)).all():
            raise ValueError("color components must lie in [0, 1]")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (len(pos),):
                raise ValueError(f"labels must have length {len(pos)}, got {lab.shape}")
            bad = (lab != UNLABELED) & ((lab < 0) | (lab >= self.num_classes))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ValueError(f"label {lab[i]} at point {i} outside [0, {self.num_classes})")
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.positions)

    def without_labels(self):
        return PointCloud(self.positions, self.colors, None, self.num_classes)


class SpatialIndex:
    """Kd-tree over 3-D positions answering exact k-nearest-neighbour queries.

    Results are ordered by squared Euclidean distance with ties broken by the
    lower point index, so they match an exhaustive scan exactly. The tree is
    stored flat (per-node index range, children and bounding box) so the
    compiled query kernel can walk it without Python objects.
    """

    def __init__(self, positions, leaf_size=16, k_default=DEFAULT_K):
        pts = np.ascontiguousarray(positions, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        finite = np.isfinite(pts).all(axis=1)
        if not finite.all():
            raise ValueError(f"non-finite coordinate at point {int(np.flatnonzero(~finite)[0])}")
        self.points = pts
        self.k_default = k_default
        self._tables = {}
        self._build(leaf_size)

    def __len__(self):
        return len(self.points)

    def _build(self, leaf_size):
        pts = self.points
        perm = np.arange(len(pts), dtype=np.int64)
        start, stop, left, right, lo, hi = [], [], [], [], [], []

        def new_node(s, e):
            sub = pts[perm[s:e]]
            start.append(s)
            stop.append(e)
            left.append(-1)
            right.append(-1)
            lo.append(sub.min(axis=0))
            hi.append(sub.max(axis=0))
            return len(start) - 1

        todo = [new_node(0, len(pts))]
        while todo:
            node = todo.pop()
            s, e = start[node], stop[node]
            if e - s <= leaf_size:
                continue
            dim = int(np.argmax(hi[node] - lo[node]))
            mid = (e - s) // 2
            seg = perm[s:e]
            perm[s:e] = seg[np.argpartition(pts[seg, dim], mid, kind="introselect")]
            left[node] = new_node(s, s + mid)
            right[node] = new_node(s + mid, e)
            todo.extend((right[node], left[node]))

        self._perm = perm
        self._start = np.asarray(start, dtype=np.int64)
        self._stop = np.asarray(stop, dtype=np.int64)
        self._left = np.asarray(left, dtype=np.int64)
        self._right = np.asarray(right, dtype=np.int64)
        self._lo = np.ascontiguousarray(lo, dtype=np.float64)
        self._hi = np.ascontiguousarray(hi, dtype=np.float64)

    def query(self, queries, k=None):
        """KNN for each row of ``queries``; returns ``(indices, sq_distances)``.

        Each has shape (Q, min(k, N)).
        """
        k = self.k_default if k is None else int(k)
        if k < 1:
            raise ValueError("k must be at least 1")
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if q.shape[1] != 3:
            raise ValueError(f"queries must be Q x 3, got {q.shape}")
        if not np.isfinite(q).all():
            raise ValueError("non-finite query coordinate")
        k = min(k, len(self.points))
        return _accel.query_knn(
            self.points, self._perm, self._start, self._stop,
            self._left, self._right, self._lo, self._hi, q, k,
        )

    def knn(self, query_point, k=None):
        idx, _ = self.query(np.asarray(query_point, dtype=np.float64).reshape(1, 3), k)
        return idx[0]

    def neighbor_table(self, k=None):
        """N x min(k, N) neighbour indices of every indexed point (itself first).

        Memoised per k: the table depends only on the positions.
        """
        k = self.k_default if k is None else int(k)
        if k not in self._tables:
            self._tables[k] = self.query(self.points, k)[0]
        return self._tables[k]

    def within_radius(self, center, radius):
        """Indices of all points within ``radius`` of ``center``, ascending."""
        d = self.points - np.asarray(center, dtype=np.float64)
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        return np.flatnonzero(d2 <= radius * radius)


def build_index(positions, k_default=DEFAULT_K):
    return SpatialIndex(positions, k_default=k_default)


def knn(index, query_point, k):
    return index.knn(query_point, k)


# --------------------------------------------------------------------------
# PLY


class PLYError(ValueError):
    pass


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary path beside ``path``; rename over it on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_REQUIRED = ("x", "y", "z", "red", "green", "blue")


def save_ply(cloud, path, include_labels=True):
    """Write an ASCII PLY. Colors are quantised to 8 bits; positions are
    written with 17 significant digits so they reload bit-exactly."""
    with_labels = include_labels and cloud.labels is not None
    header = [
        "ply",
        "format ascii 1.0",
        f"comment num_classes {cloud.num_classes}",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if with_labels:
        header.append("property int label")
    header.append("end_header")

    cols = [cloud.positions, np.rint(cloud.colors * 255.0)]
    fmt = ["%.17g"] * 3 + ["%d"] * 3
    if with_labels:
        cols.append(cloud.labels[:, None].astype(np.float64))
        fmt.append("%d")
    with atomic_path(path) as tmp, open(tmp, "w") as f:
        f.write("\n".join(header) + "\n")
        if len(cloud):
            np.savetxt(f, np.hstack(cols), fmt=fmt)


def load_ply(path):
    with open(path) as f:
        lines = iter(enumerate(f, start=1))

        def next_line():
            try:
                return next(lines)
            except StopIteration:
                raise PLYError(f"{path}: unexpected end of header") from None

        lineno, line = next_line()
        if line.strip() != "ply":
            raise PLYError(f"{path}: line {lineno}: expected 'ply'")
        lineno, line = next_line()
        if line.split() != ["format", "ascii", "1.0"]:
            raise PLYError(f"{path}: line {lineno}: only 'format ascii 1.0' is supported")

        count = None
        props = []
        num_classes = None
        in_vertex = False
        while True:
            lineno, line = next_line()
            tok = line.split()
            if not tok:
                raise PLYError(f"{path}: line {lineno}: empty header line")
            if tok[0] == "end_header":
                break
            if tok[0] in ("comment", "obj_info"):
                if len(tok) == 3 and tok[1] == "num_classes":
                    num_classes = int(tok[2])
                continue
            if tok[0] == "element":
                if len(tok) != 3:
                    raise PLYError(f"{path}: line {lineno}: malformed element line")
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    try:
                        count = int(tok[2])
                    except ValueError:
                        raise PLYError(f"{path}: line {lineno}: bad vertex count {tok[2]!r}") from None
                continue
            if tok[0] == "property":
                if len(tok) != 3:
                    raise PLYError(f"{path}: line {lineno}: malformed property line")
                if in_vertex:
                    props.append(tok[2])
                continue
            raise PLYError(f"{path}: line {lineno}: unrecognised header keyword {tok[0]!r}")

        if count is None:
            raise PLYError(f"{path}: no vertex element")
        for name in _REQUIRED:
            if name not in props:
                raise PLYError(f"missing property: {name}")

        data = np.loadtxt(f, max_rows=count, ndmin=2, dtype=np.float64) if count else np.zeros((0, len(props)))
    if data.shape != (count, len(props)):
        raise PLYError(f"{path}: expected {count} vertices with {len(props)} values, got {data.shape}")

    col = {name: i for i, name in enumerate(props)}
    positions = data[:, [col["x"], col["y"], col["z"]]]
    colors = data[:, [col["red"], col["green"], col["blue"]]] / 255.0
    labels = None
    if "label" in col:
        labels = data[:, col["label"]].astype(np.int64)
        if num_classes is None:
            num_classes = max(int(labels.max(initial=-1)) + 1, 1)
    return PointCloud(positions, colors, labels, num_classes or 1)


# --------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SceneSpec:
    num_points: int = 50000
    num_classes: int = 4
    extent: float = 10.0
    color_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.num_points < 1:
            raise ValueError("num_points must be positive")
        if self.num_points < self.num_classes:
            raise ValueError(
                f"num_points ({self.num_points}) < num_classes ({self.num_classes})"
            )
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if not 0.0 <= self.color_noise <= 0.2:
            raise ValueError("color_noise must lie in [0, 0.2]")


# floor, wall, box, sphere, then alternating box/sphere kinds
_BASE_PALETTE = [
    (0.55, 0.47, 0.38),
    (0.80, 0.78, 0.70),
    (0.25, 0.40, 0.65),
    (0.35, 0.60, 0.30),
    (0.70, 0.30, 0.25),
    (0.75, 0.65, 0.20),
    (0.50, 0.30, 0.60),
    (0.20, 0.60, 0.60),
]
MIN_PALETTE_DELTA_E = 20.0


def class_palette(num_classes):
    """Deterministic per-class base colors, pairwise CIE76 distance >= 20."""
    colors = [np.array(c) for c in _BASE_PALETTE[:num_classes]]
    if len(colors) < num_classes:
        levels = np.linspace(0.0, 1.0, 9)
        grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
        grid_lab = rgb_to_lab(grid)
        nearest = np.full(len(grid), np.inf)
        for c in colors:
            nearest = np.minimum(nearest, delta_e(grid_lab, rgb_to_lab(c)))
        while len(colors) < num_classes:
            j = int(np.argmax(nearest))
            if nearest[j] < MIN_PALETTE_DELTA_E:
                raise ValueError(f"cannot find {num_classes} colors {MIN_PALETTE_DELTA_E} dE apart")
            colors.append(grid[j].copy())
            nearest = np.minimum(nearest, delta_e(grid_lab, grid_lab[j]))
    return np.array(colors)


def _primitive_kind(c):
    if c < 2:
        return ("floor", "wall")[c]
    return "box" if c % 2 == 0 else "sphere"


def _sample_box(rng, n, lo, hi):
    # five faces (no bottom), uniform by area
    sx, sy, sz = hi - lo
    areas = np.array([sx * sy, sx * sz, sx * sz, sy * sz, sy * sz])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u = rng.random((n, 3))
    pts = lo + u * (hi - lo)
    pts[face == 0, 2] = hi[2]
    pts[face == 1, 1] = lo[1]
    pts[face == 2, 1] = hi[1]
    pts[face == 3, 0] = lo[0]
    pts[face == 4, 0] = hi[0]
    return pts


def _sample_sphere(rng, n, center, radius):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return center + radius * v


def generate_scene(spec):
    """Room-like scene: floor, walls, boxes and spheres, one class per kind.

    Points are spread over all primitive surfaces with uniform density;
    each class gets at least one point. Colors are the class base color
    plus isotropic Gaussian noise, clipped to [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    E = spec.extent
    H = 0.3 * E
    C = spec.num_classes

    # (class, kind, params, area)
    prims = [(0, "floor", None, E * E)]
    for w in range(4):
        prims.append((1, "wall", w, E * H))
    for c in range(2, C):
        kind = _primitive_kind(c)
        for _ in range(int(rng.integers(3, 7))):
            if kind == "box":
                size = rng.uniform(0.05 * E, 0.15 * E, size=3)
                corner = np.append(rng.uniform(0.05 * E, 0.95 * E - size[:2]), 0.0)
                lo_, hi_ = corner, corner + size
                area = size[0] * size[1] + 2 * size[2] * (size[0] + size[1])
                prims.append((c, "box", (lo_, hi_), area))
            else:
                r = rng.uniform(0.03 * E, 0.08 * E)
                center = np.array([*rng.uniform(0.05 * E + r, 0.95 * E - r, size=2), r])
                if rng.random() < 0.3:
                    center[2] += rng.uniform(0.0, 0.5 * H)
                prims.append((c, "sphere", (center, r), 4 * np.pi * r * r))

    areas = np.array([p[3] for p in prims])
    counts = _allocate(spec.num_points, areas, np.array([p[0] for p in prims]), C)

    positions = np.empty((spec.num_points, 3))
    labels = np.empty(spec.num_points, dtype=np.int64)
    at = 0
    for (c, kind, params, _), n in zip(prims, counts):
        if n == 0:
            continue
        if kind == "floor":
            pts = np.column_stack([rng.uniform(0, E, n), rng.uniform(0, E, n), np.zeros(n)])
        elif kind == "wall":
            t, h = rng.uniform(0, E, n), rng.uniform(0, H, n)
            fixed = np.zeros(n) if params in (0, 2) else np.full(n, E)
            pts = (np.column_stack([fixed, t, h]) if params in (0, 1)
                   else np.column_stack([t, fixed, h]))
        elif kind == "box":
            pts = _sample_box(rng, n, *params)
        else:
            pts = _sample_sphere(rng, n, *params)
        positions[at:at + n] = pts
        labels[at:at + n] = c
        at += n

    palette = class_palette(C)
    colors = palette[labels]
    if spec.color_noise > 0:
        colors = np.clip(colors + rng.normal(0.0, spec.color_noise, colors.shape), 0.0, 1.0)
    return PointCloud(positions, colors, labels, C)


def _allocate(n, areas, classes, num_classes):
    # largest-remainder split of n proportional to area, then make sure every
    # class owns at least one point by taking from the largest primitive
    share = n * areas / areas.sum()
    counts = np.floor(share).astype(np.int64)
    rest = n - counts.sum()
    counts[np.argsort(-(share - counts), kind="stable")[:rest]] += 1
    for c in range(num_classes):
        members = np.flatnonzero(classes == c)
        if counts[members].sum() == 0:
            per_class = np.bincount(classes, weights=counts, minlength=num_classes)
            donors = np.where(per_class[classes] > 1, counts, 0)
            counts[int(np.argmax(donors))] -= 1
            counts[members[0]] += 1
    return counts
