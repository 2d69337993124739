"""sRGB <-> CIELAB conversion and the network input/target channel layouts.

Conversions use the sRGB transfer curve and primaries with the D65 white
point. The white point is taken as the row sums of the RGB->XYZ matrix so
that neutral greys land exactly on the a = b = 0 axis.
"""

from typing import NamedTuple

import numpy as np

# IEC 61966-2-1 linear sRGB -> XYZ
RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
WHITE_D65 = RGB_TO_XYZ.sum(axis=1)

L_SCALE = 100.0
AB_SCALE = 128.0

_DELTA = 6.0 / 29.0


class LabColor(NamedTuple):
    L: float
    a: float
    b: float


def _expand_gamma(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _compress_gamma(c):
    # linear segment also carries negative (out-of-gamut) values
    pos = np.maximum(c, 0.0031308)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * pos ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(f):
    return np.where(f > _DELTA, f**3, 3.0 * _DELTA**2 * (f - 4.0 / 29.0))


def rgb_to_lab(rgb):
    """Convert sRGB in [0, 1] to CIELAB.

    Accepts any array whose last axis has length 3 and returns an array of
    the same shape holding (L, a, b).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {rgb.shape}")
    bad = ~((rgb >= 0.0) & (rgb <= 1.0))
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise ValueError(f"rgb component outside [0, 1] at {tuple(pos)}: {rgb[tuple(pos)]!r}")
    lin = _expand_gamma(rgb)
    xyz = lin @ RGB_TO_XYZ.T
    fx, fy, fz = np.moveaxis(_f(xyz / WHITE_D65), -1, 0)
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`; out-of-gamut results are clamped to [0, 1]."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {lab.shape}")
    L, a, b = np.moveaxis(lab, -1, 0)
    fy = (L + 16.0) / 116.0
    f = np.stack([fy + a / 500.0, fy, fy - b / 200.0], axis=-1)
    xyz = _f_inv(f) * WHITE_D65
    lin = xyz @ XYZ_TO_RGB.T
    return np.clip(_compress_gamma(lin), 0.0, 1.0)


def split_pretext_channels(cloud):
    """Build the colorization input and its ab targets.

    Returns ``(features, ab_targets)``: features is N x 6 holding
    (x, y, z, L, L, L) with L scaled by 1/100, targets is N x 2 holding
    (a, b) scaled by 1/128.
    """
    lab = rgb_to_lab(cloud.colors)
    light = lab[:, :1] / L_SCALE
    features = np.hstack([cloud.positions, light, light, light])
    return features, lab[:, 1:] / AB_SCALE


def segmentation_features(cloud):
    """N x 6 segmentation input: (x, y, z, L/100, a/128, b/128)."""
    lab = rgb_to_lab(cloud.colors)
    scale = np.array([L_SCALE, AB_SCALE, AB_SCALE])
    return np.hstack([cloud.positions, lab / scale])


def recombine(light, ab):
    """Rebuild sRGB colors from scaled lightness (N,) and scaled ab (N x 2)."""
    lab = np.column_stack([np.asarray(light) * L_SCALE, np.asarray(ab) * AB_SCALE])
    return lab_to_rgb(lab)


def delta_e(lab1, lab2):
    """CIE76 color difference."""
    return np.linalg.norm(np.asarray(lab1) - np.asarray(lab2), axis=-1)
