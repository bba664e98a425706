"""Oscillatory quadrature helpers.

Filon-type rules integrate the piecewise quadratic interpolant of grid samples
(one parabola per pair of cells) against e^{iwy} with exact moments, so the
error is O(h^3) uniformly in the frequency.  The block sums below evaluate
Σ_j c_j e^{i w x_j} on uniform grids with one matrix product per block instead
of one complex exponential per (w, x) pair.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

_SERIES_TERMS = 24
_SERIES_COEF = [[1.0 / (math.factorial(k) * (n + k + 1)) for k in range(_SERIES_TERMS)] for n in range(3)]


def unit_moments(theta):
    """E_n(theta) = ∫_0^1 u^n e^{i theta u} du for n = 0, 1, 2 (theta may be complex)."""
    theta = np.asarray(theta, dtype=complex)
    a = 1j * theta
    small = np.abs(theta) < 1.0
    out = [np.empty_like(a) for _ in range(3)]
    if np.any(small):
        s = a[small]
        for n in range(3):
            # Σ_k s^k / (k! (n+k+1)) by Horner
            acc = np.full_like(s, _SERIES_COEF[n][-1])
            for c in _SERIES_COEF[n][-2::-1]:
                acc = acc * s + c
            out[n][small] = acc
    big = ~small
    if np.any(big):
        s = a[big]
        es = np.exp(s)
        e0 = (es - 1) / s
        e1 = (es - e0) / s
        e2 = (es - 2 * e1) / s
        out[0][big], out[1][big], out[2][big] = e0, e1, e2
    return out


def _pair_weights(w, h, part="full"):
    """Weights (w0, w1, w2) of f(-h), f(0), f(h) for ∫ q(s) e^{iws} ds over a pair centred at 0.

    part selects the interval: 'full' = [-h, h], 'left' = [-h, 0], 'right' = [0, h].
    """
    theta = np.asarray(w, dtype=complex) * h
    if part in ("full", "right"):
        p = unit_moments(theta)
    if part in ("full", "left"):
        m = unit_moments(-theta)
    if part == "full":
        M = [h * (p[0] + m[0]), h ** 2 * (p[1] - m[1]), h ** 3 * (p[2] + m[2])]
    elif part == "right":
        M = [h * p[0], h ** 2 * p[1], h ** 3 * p[2]]
    else:
        M = [h * m[0], -h ** 2 * m[1], h ** 3 * m[2]]
    w0 = -M[1] / (2 * h) + M[2] / (2 * h * h)
    w1 = M[0] - M[2] / (h * h)
    w2 = M[1] / (2 * h) + M[2] / (2 * h * h)
    return w0, w1, w2


def sum_over_grid(w, x0, dx, c, block=None):
    """S[i, m] = Σ_j c[j, m] exp(i w_i (x0 + j dx)) for a uniform grid.

    c may be 1-D (returns shape (len(w),)).
    """
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    c = np.asarray(c, dtype=complex)
    flat = c.ndim == 1
    if flat:
        c = c[:, None]
    n = c.shape[0]
    if n == 0:
        out = np.zeros((len(w), c.shape[1]), complex)
        return out[:, 0] if flat else out
    B = block or max(1, int(math.ceil(math.sqrt(n))))
    nb = -(-n // B)
    pad = np.zeros((nb * B, c.shape[1]), complex)
    pad[:n] = c
    cb = pad.reshape(nb, B, c.shape[1])
    out = np.zeros((len(w), c.shape[1]), complex)
    step = max(1, int(4e6 // max(1, B + nb)))
    j = np.arange(B) * dx
    starts = x0 + np.arange(nb) * B * dx
    for s in range(0, len(w), step):
        ww = w[s:s + step]
        base = np.exp(1j * np.outer(ww, j))            # (nw, B)
        phase = np.exp(1j * np.outer(ww, starts))      # (nw, nb)
        # Σ_b phase[i,b] Σ_j base[i,j] cb[b,j,m]
        inner = np.einsum("ij,bjm->ibm", base, cb, optimize=True)
        out[s:s + step] = np.einsum("ib,ibm->im", phase, inner, optimize=True)
    return out[:, 0] if flat else out


def sum_over_freq(w, a, x0, dx, n_x, block=None):
    """U[j, m] = Σ_i a[i, m] exp(i w_i (x0 + j dx)) for j = 0..n_x-1."""
    w = np.asarray(w, dtype=complex)
    a = np.asarray(a, dtype=complex)
    flat = a.ndim == 1
    if flat:
        a = a[:, None]
    B = block or max(1, int(math.ceil(math.sqrt(n_x))))
    nb = -(-n_x // B)
    j = np.arange(B) * dx
    starts = x0 + np.arange(nb) * B * dx
    out = np.zeros((nb * B, a.shape[1]), complex)
    step = max(1, int(4e6 // max(1, B + nb)))
    for s in range(0, len(w), step):
        ww = w[s:s + step]
        base = np.exp(1j * np.outer(j, ww))            # (B, nw)
        phase = np.exp(1j * np.outer(starts, ww))      # (nb, nw)
        for m in range(a.shape[1]):
            pa = phase * a[s:s + step, m]               # (nb, nw)
            out[:, m] += (pa @ base.T).reshape(-1)
    out = out[:n_x]
    return out[:, 0] if flat else out


def filon_transform(f, x0, dx, w):
    """∫_{x0}^{x0+n dx} q_f(y) e^{i w y} dy for each w; q_f is the pairwise quadratic interpolant.

    f holds n+1 samples with n even.  Samples that are exactly zero outside the
    support are skipped.  Returns an array shaped like w.
    """
    f = np.asarray(f, dtype=complex)
    w = np.asarray(w, dtype=complex)
    shape = w.shape
    w = w.reshape(-1)
    n = len(f) - 1
    if n % 2:
        raise ValueError("filon_transform needs an even number of cells")
    nz = np.flatnonzero(f)
    if nz.size == 0:
        return np.zeros(shape, complex)
    P = n // 2
    p_lo = max(0, (nz[0] - 1) // 2)
    p_hi = min(P - 1, nz[-1] // 2)
    idx = 2 * np.arange(p_lo, p_hi + 1)
    cols = np.stack([f[idx], f[idx + 1], f[idx + 2]], axis=1)
    centres0 = x0 + (2 * p_lo + 1) * dx
    S = sum_over_grid(w, centres0, 2 * dx, cols)
    w0, w1, w2 = _pair_weights(w, dx)
    return (w0 * S[:, 0] + w1 * S[:, 1] + w2 * S[:, 2]).reshape(shape)


def filon_cumulative(f, x0, dx, w):
    """A[i, j] = ∫_{x0}^{x_j} q_f(y) e^{i w_i y} dy at every grid node (consistent with filon_transform)."""
    f = np.asarray(f, dtype=complex)
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    n = len(f) - 1
    P = n // 2
    c = x0 + (2 * np.arange(P) + 1) * dx
    ph = np.exp(1j * np.outer(w, c))
    f0, f1, f2 = f[0:-1:2], f[1::2], f[2::2]
    full = _pair_weights(w, dx, "full")
    left = _pair_weights(w, dx, "left")
    pair = ph * (full[0][:, None] * f0 + full[1][:, None] * f1 + full[2][:, None] * f2)
    half = ph * (left[0][:, None] * f0 + left[1][:, None] * f1 + left[2][:, None] * f2)
    A = np.zeros((len(w), n + 1), complex)
    A[:, 2::2] = np.cumsum(pair, axis=1)
    A[:, 1::2] = A[:, 0:-1:2] + half
    return A


@lru_cache(maxsize=8)
def _leggauss(order):
    return np.polynomial.legendre.leggauss(order)


def gauss_panels(a, b, n_panels, order=16):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    t, wt = _leggauss(order)
    edges = np.linspace(a, b, int(n_panels) + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t).ravel()
    weights = (half[:, None] * wt).ravel()
    return nodes, weights
