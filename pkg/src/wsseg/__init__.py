"""Weakly supervised point-cloud segmentation with a colorization pretext
task and prototype-based sparse label propagation."""

from ._accel import BACKEND
from .core import (
    UNLABELED,
    PointCloud,
    SceneSpec,
    SpatialIndex,
    build_index,
    generate_scene,
    knn,
    load_ply,
    save_ply,
)

__version__ = "0.1.0"
