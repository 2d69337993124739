import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsseg.colorspace import (
    lab_to_rgb,
    rgb_to_lab,
    segmentation_features,
    split_pretext_channels,
)
from wsseg.core import PointCloud


def reference_lab(r, g, b):
    """Straight-line sRGB -> XYZ(D65) -> Lab, scalar math only."""

    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    R, G, B = lin(r), lin(g), lin(b)
    X = 0.4124564 * R + 0.3575761 * G + 0.1804375 * B
    Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B
    Z = 0.0193339 * R + 0.1191920 * G + 0.9503041 * B

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(X / 0.95047), f(Y / 1.0), f(Z / 1.08883)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def test_white():
    assert np.allclose(rgb_to_lab([1, 1, 1]), [100, 0, 0], atol=1e-3)


def test_black():
    assert np.allclose(rgb_to_lab([0, 0, 0]), [0, 0, 0], atol=1e-12)


def test_red_against_reference():
    expected = reference_lab(1.0, 0.0, 0.0)
    assert np.allclose(rgb_to_lab([1, 0, 0]), expected, atol=1e-3)
    assert np.allclose(expected, (53.24, 80.09, 67.20), atol=0.01)


def test_reference_on_random_colors(rng):
    for c in rng.uniform(size=(50, 3)):
        assert np.allclose(rgb_to_lab(c), reference_lab(*c), atol=1e-3)


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        rgb_to_lab([1.2, 0, 0])
    with pytest.raises(ValueError):
        rgb_to_lab([np.nan, 0, 0])


def test_inverse_endpoints():
    assert np.allclose(lab_to_rgb([100, 0, 0]), 1.0, atol=1e-3)
    assert np.allclose(lab_to_rgb([0, 0, 0]), 0.0, atol=1e-12)


def test_round_trip(rng):
    rgb = rng.uniform(size=(10000, 3))
    assert np.abs(lab_to_rgb(rgb_to_lab(rgb)) - rgb).max() <= 1e-4


def test_out_of_gamut_clamped():
    out = lab_to_rgb([[50, 127, -127], [100, -128, 127], [5, 0, 100]])
    assert ((out >= 0) & (out <= 1)).all()


@given(st.floats(0.0, 1.0))
def test_gray_axis(t):
    _, a, b = rgb_to_lab([t, t, t])
    assert abs(a) <= 1e-6 and abs(b) <= 1e-6


def test_gray_monotone():
    t = np.linspace(0, 1, 2001)
    L = rgb_to_lab(np.column_stack([t, t, t]))[:, 0]
    assert (np.diff(L) > 0).all()


def test_split_gray_cloud(rng):
    t = rng.uniform(size=20)
    cloud = PointCloud(rng.normal(size=(20, 3)), np.column_stack([t, t, t]))
    feats, ab = split_pretext_channels(cloud)
    assert np.abs(ab).max() <= 1e-8
    assert feats.shape == (20, 6)


def test_split_replicates_lightness(rng):
    cloud = PointCloud(rng.normal(size=(30, 3)), rng.uniform(size=(30, 3)))
    feats, _ = split_pretext_channels(cloud)
    assert np.array_equal(feats[:, 3], feats[:, 4])
    assert np.array_equal(feats[:, 3], feats[:, 5])
    assert np.array_equal(feats[:, :3], cloud.positions)


def test_split_targets_per_point():
    colors = np.array([[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.1]])
    cloud = PointCloud(np.zeros((3, 3)), colors)
    feats, ab = split_pretext_channels(cloud)
    for i, c in enumerate(colors):
        L, a, b = reference_lab(*c)
        assert ab[i] == pytest.approx([a / 128, b / 128], abs=1e-5)
        assert feats[i, 3] == pytest.approx(L / 100, abs=1e-5)


def test_segmentation_features(rng):
    cloud = PointCloud(rng.normal(size=(5, 3)), rng.uniform(size=(5, 3)))
    f = segmentation_features(cloud)
    _, ab = split_pretext_channels(cloud)
    assert np.array_equal(f[:, 4:], ab)
    assert math.isclose(f[0, 3] * 100, rgb_to_lab(cloud.colors[0])[0])
