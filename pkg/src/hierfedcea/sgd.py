"""Compiled minibatch SGD for the 7-3-3 network.

The numpy routines in :mod:`hierfedcea.model` are the reference; these
loops do the same arithmetic without per-batch allocation so that a
federation round over a dozen facilities costs milliseconds.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def batch_gradient(theta, xn, y, idx, start, stop, g):
    """Gradient of the mean squared error over rows ``idx[start:stop]`` into ``g``."""
    for p in range(36):
        g[p] = 0.0
    m = stop - start
    h = np.empty(3)
    d_out = np.empty(3)
    for s in range(start, stop):
        r = idx[s]
        for j in range(3):
            z = theta[21 + j]
            for c in range(7):
                z += theta[j * 7 + c] * xn[r, c]
            h[j] = 1.0 / (1.0 + math.exp(-z))
        for o in range(3):
            out = theta[33 + o]
            for j in range(3):
                out += theta[24 + o * 3 + j] * h[j]
            d_out[o] = 2.0 * (out - y[r, o]) / m
            g[33 + o] += d_out[o]
            for j in range(3):
                g[24 + o * 3 + j] += d_out[o] * h[j]
        for j in range(3):
            back = 0.0
            for o in range(3):
                back += d_out[o] * theta[24 + o * 3 + j]
            d_pre = back * h[j] * (1.0 - h[j])
            g[21 + j] += d_pre
            for c in range(7):
                g[j * 7 + c] += d_pre * xn[r, c]


@njit(cache=True)
def _finish_step(theta, g, lr, clip, mu, anchor, use_anchor, corr, use_corr, mask):
    if use_anchor:
        for p in range(36):
            g[p] += mu * (theta[p] - anchor[p])
    if use_corr:
        for p in range(36):
            g[p] += corr[p]
    norm = 0.0
    for p in range(36):
        g[p] *= mask[p]
        norm += g[p] * g[p]
    norm = math.sqrt(norm)
    scale = 1.0
    if clip > 0.0 and norm > clip:
        scale = clip / norm
    for p in range(36):
        theta[p] -= lr * scale * g[p]


@njit(cache=True)
def sgd_epochs(theta, xn, y, perms, batch, lr, clip, mu, anchor, use_anchor, corr, use_corr, mask):
    """Plain SGD over the row orders in ``perms`` (one row per epoch).

    Each step's gradient gets the proximal pull ``mu (theta - anchor)``
    and the drift correction ``corr`` when enabled, is masked, clipped to
    norm ``clip`` (disabled when ``clip <= 0``) and applied. Works on a
    copy; returns ``(theta, n_steps)``.
    """
    th = theta.copy()
    g = np.empty(36)
    n = perms.shape[1]
    steps = 0
    for e in range(perms.shape[0]):
        idx = perms[e]
        start = 0
        while start < n:
            stop = min(start + batch, n)
            batch_gradient(th, xn, y, idx, start, stop, g)
            _finish_step(th, g, lr, clip, mu, anchor, use_anchor, corr, use_corr, mask)
            steps += 1
            start = stop
    return th, steps


@njit(cache=True)
def fo_meta_epochs(theta, xn, y, perms, batch, alpha, beta, clip, mask):
    """First-order meta-learning steps on consecutive minibatch pairs.

    For each pair: adapt ``theta' = theta - alpha grad(theta; B1)``, then
    move ``theta -= beta grad(theta'; B2)``. Returns ``(theta, n_steps)``.
    """
    th = theta.copy()
    g = np.empty(36)
    tmp = np.empty(36)
    dummy = np.zeros(36)
    n = perms.shape[1]
    steps = 0
    for e in range(perms.shape[0]):
        idx = perms[e]
        start = 0
        while start < n:
            mid = min(start + batch, n)
            stop = min(mid + batch, n)
            if stop == mid:
                # odd batch out: reuse it for both halves
                mid_s, stop_s = start, mid
            else:
                mid_s, stop_s = mid, stop
            batch_gradient(th, xn, y, idx, start, mid, g)
            for p in range(36):
                tmp[p] = th[p] - alpha * g[p] * mask[p]
            batch_gradient(tmp, xn, y, idx, mid_s, stop_s, g)
            _finish_step(th, g, beta, clip, 0.0, dummy, False, dummy, False, mask)
            steps += 1
            start = stop
    return th, steps


def make_perms(rng: np.random.Generator, n: int, epochs: int) -> np.ndarray:
    return np.stack([rng.permutation(n) for _ in range(epochs)]) if epochs > 0 else np.zeros((0, n), dtype=np.int64)
