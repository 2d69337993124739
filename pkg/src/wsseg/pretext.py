"""Self-supervised colorization targets and losses.

Prediction columns are (a, b, mu_a, sigma_a, mu_b, sigma_b), all in the
scaled ab units produced by :mod:`wsseg.colorspace`.
"""

from typing import NamedTuple

import numpy as np

EPSILON = 1e-8

AB_COLS = slice(0, 2)
STAT_COLS = slice(2, 6)


class LocalStats(NamedTuple):
    mu_a: np.ndarray
    sigma_a: np.ndarray
    mu_b: np.ndarray
    sigma_b: np.ndarray

    def as_columns(self):
        """N x 4 in prediction column order (mu_a, sigma_a, mu_b, sigma_b)."""
        return np.column_stack([self.mu_a, self.sigma_a, self.mu_b, self.sigma_b])


def local_color_stats(ab_targets, index, K=16, epsilon=EPSILON):
    """Mean and standard deviation of a and b over each point's K nearest
    neighbours (the point itself included), population variance plus
    ``epsilon`` under the square root."""
    ab = np.asarray(ab_targets, dtype=np.float64)
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > len(index):
        raise ValueError(f"K={K} exceeds the number of points ({len(index)})")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if len(ab) != len(index):
        raise ValueError("ab_targets and index disagree on the number of points")
    neigh = ab[index.neighbor_table(K)]  # N x K x 2
    mu = neigh.mean(axis=1)
    var = ((neigh - mu[:, None, :]) ** 2).mean(axis=1)
    sigma = np.sqrt(var + epsilon)
    return LocalStats(mu[:, 0], sigma[:, 0], mu[:, 1], sigma[:, 1])


def _check(pred, n_cols_other, other):
    pred = np.asarray(pred)
    if pred.ndim != 2 or pred.shape[1] != 6:
        raise ValueError(f"prediction must be N x 6, got {pred.shape}")
    if other.shape != (len(pred), n_cols_other):
        raise ValueError(f"expected targets of shape {(len(pred), n_cols_other)}, got {other.shape}")
    return pred


def loss_ab(pred, targets):
    """Mean L1 colorization error over the a and b channels.

    Returns ``(loss, grad)`` with grad the same shape as ``pred`` and
    sign(0) taken as 0.
    """
    targets = np.asarray(targets)
    pred = _check(pred, 2, targets)
    n = len(pred)
    r = pred[:, AB_COLS] - targets
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    grad[:, AB_COLS] = np.sign(r) / (2 * n)
    return float(np.abs(r).sum() / (2 * n)), grad


def loss_local(pred, stats):
    """Mean L1 error of the predicted local mean / spread columns."""
    target = stats.as_columns() if isinstance(stats, LocalStats) else np.asarray(stats)
    pred = _check(pred, 4, target)
    n = len(pred)
    r = pred[:, STAT_COLS] - target
    grad = np.zeros_like(pred)
    if n == 0:
        return 0.0, grad
    grad[:, STAT_COLS] = np.sign(r) / (4 * n)
    return float(np.abs(r).sum() / (4 * n)), grad


def loss_pretext(pred, targets, stats):
    la, ga = loss_ab(pred, targets)
    ll, gl = loss_local(pred, stats)
    return la + ll, ga + gl
