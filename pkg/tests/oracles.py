"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np

from wsseg.core import build_index
from wsseg.model import PRETEXT, SEG, backward, forward, init_params
from wsseg.pretext import LocalStats, loss_ab, loss_local, loss_pretext
from wsseg.propagation import PropagationConfig, loss_sp, propagate
from wsseg.training import loss_seg

from conftest import rel_err


def loop_propagate(z_l, labels, z_u, C, sigma, k_top):
    """Plain-loop reimplementation used as an oracle."""
    d = z_l.shape[1]
    present = [c for c in range(C) if any(lab == c for lab in labels)]
    rho = {}
    for c in present:
        members = [z_l[i] for i in range(len(z_l)) if labels[i] == c]
        rho[c] = [sum(m[j] for m in members) / len(members) for j in range(d)]
    N = len(z_u)
    S = []
    for i in range(N):
        w = [math.exp(-sum((z_u[i][j] - rho[c][j]) ** 2 for j in range(d)) / sigma) for c in present]
        top = max(w)
        e = [math.exp(v - top) for v in w]
        tot = sum(e)
        S.append([v / tot for v in e])
    chosen_cols = [set() for _ in range(N)]
    for col in range(len(present)):
        order = sorted(range(N), key=lambda i: (-S[i][col], i))
        for i in order[: min(k_top, N)]:
            chosen_cols[i].add(col)
    mask = np.array([bool(s) for s in chosen_cols])
    chosen, soft = [], []
    for i in range(N):
        if not chosen_cols[i]:
            continue
        best = min(chosen_cols[i], key=lambda col: (-S[i][col], col))
        chosen.append(present[best])
        row = [0.0] * C
        for col, c in enumerate(present):
            row[c] = S[i][col]
        soft.append(row)
    return mask, np.array(chosen, dtype=int), np.array(soft).reshape(-1, C)


def random_instance(rng):
    C = int(rng.integers(1, 5))
    d = int(rng.integers(1, 5))
    M = int(rng.integers(1, 11))
    N = int(rng.integers(1, 51))
    z_l = rng.normal(size=(M, d))
    z_u = rng.normal(size=(N, d))
    if rng.random() < 0.2:
        z_u[: N // 2] = np.round(z_u[: N // 2])  # force some exact ties
        z_l = np.round(z_l)
    labels = rng.integers(0, C, size=M)
    return z_l, labels, z_u, C


H = 1e-5


def model_features(rng, n):
    return np.hstack([rng.uniform(-1, 1, size=(n, 3)), rng.uniform(-0.5, 0.5, size=(n, 3))])


def _pattern(params, feats, index, head, centers, k, kinks):
    z, out, c = forward(params, feats, index, head, centers, k)
    return (c.a1 > 0, c.a2 > 0, c.argmax, c.a3 > 0, kinks(z, out))


def _same(p, q):
    return all(np.array_equal(a, b) for a, b in zip(p, q))


def check_model_gradient(rng, head, loss, n=40, k=6, n_centers=12):
    """Relative error between backprop and central differences of
    loss(forward(params)) over every parameter entry.

    ``loss`` is ``(fn, kinks)``: ``fn(z, out) -> (value, grad wrt head output)``
    and ``kinks(z, out)`` an array whose change marks a non-smooth point of
    the loss. Entries whose +-h perturbation flips a ReLU, a max-pool winner
    or a loss kink are left out.
    """
    fn, kinks = loss
    params = init_params(3, d=5, hidden=7, seed=int(rng.integers(1 << 30)),
                         heads=(PRETEXT, SEG))
    feats = model_features(rng, n)
    index = build_index(feats[:, :3])
    centers = np.sort(rng.choice(n, n_centers, replace=False))

    def value(p):
        z, out, _ = forward(p, feats, index, head, centers, k)
        return fn(z, out)[0]

    z, out, cache = forward(params, feats, index, head, centers, k)
    _, g_out = fn(z, out)
    grads = backward(cache, g_out)
    base = _pattern(params, feats, index, head, centers, k, kinks)

    ana, num = [], []
    for name in params.names():
        if name not in grads:
            continue
        flat = params.tensors[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + H
            params.bump()
            pp = _pattern(params, feats, index, head, centers, k, kinks)
            fp = value(params)
            flat[i] = old - H
            params.bump()
            pm = _pattern(params, feats, index, head, centers, k, kinks)
            fm = value(params)
            flat[i] = old
            params.bump()
            if not (_same(pp, base) and _same(pm, base)):
                continue
            ana.append(grads[name].reshape(-1)[i])
            num.append((fp - fm) / (2 * H))
    assert len(ana) > 100
    return rel_err(ana, num)


def _no_kinks(z, out):
    return np.zeros(0)


def pretext_losses(rng, n):
    """``{"ab": loss, "local": loss, "pretext": loss}`` on shared random targets."""
    tgt = rng.normal(size=(n, 2)) * 0.3
    st = LocalStats(*(rng.normal(size=(4, n)) * 0.3))
    ref = np.hstack([tgt, st.as_columns()])

    def kinks(z, out):
        return np.sign(out - ref)

    return {
        "ab": (lambda z, out: loss_ab(out, tgt), kinks),
        "local": (lambda z, out: loss_local(out, st), kinks),
        "pretext": (lambda z, out: loss_pretext(out, tgt, st), kinks),
    }


def seg_loss(rng, n):
    y = rng.integers(0, 3, size=n)
    return (lambda z, out: loss_seg(out.logits, y)), _no_kinks


def sp_loss(rng, n, m=4):
    """loss_sp on the last n - m rows; pseudo labels are frozen at the first
    (unperturbed) call, matching their role as constant targets."""
    frozen = {}

    def fn(z, out):
        if "pl" not in frozen:
            labels = np.arange(m) % 3
            frozen["pl"] = propagate(z[:m], labels, z[m:], 3, PropagationConfig(k_top=3))
        loss, g = loss_sp(frozen["pl"], out.probs[m:])
        full = np.zeros_like(out.logits)
        full[m:] = g
        return loss, full

    return fn, _no_kinks
