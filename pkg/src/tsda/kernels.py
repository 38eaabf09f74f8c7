"""Hot numeric kernels: recurrent scans and Gaussian gram matrices.

The scans dominate forward/backward runtime, so they are compiled with
numba when available. Set ``TSDA_NUMBA=0`` to force the pure numpy path;
both paths execute the same function bodies, so results agree exactly.
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    return os.environ.get("TSDA_NUMBA", "1").lower() not in ("0", "false", "no")


NUMBA_ENABLED = False
if _numba_wanted():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def _maybe_jit(fn):
    if NUMBA_ENABLED:
        return _njit(cache=True)(fn)
    return fn


def _gru_forward(x, wz, uz, bz, wr, ur, br, wh, uh, bh):
    """Single-layer gated recurrent scan.

    h_0 = 0; per step:
        z = sigmoid(Wz x_t + Uz h_prev + bz)
        r = sigmoid(Wr x_t + Ur h_prev + br)
        hc = tanh(Wh x_t + Uh (r * h_prev) + bh)
        h = (1 - z) * h_prev + z * hc

    Returns (h, z, r, hc), each [T, d]; the gate activations are kept for
    the analytic backward scan.
    """
    T = x.shape[0]
    d = wz.shape[0]
    h = np.zeros((T, d))
    z = np.zeros((T, d))
    r = np.zeros((T, d))
    hc = np.zeros((T, d))
    hp = np.zeros(d)
    for t in range(T):
        xt = x[t]
        zt = 1.0 / (1.0 + np.exp(-(wz @ xt + uz @ hp + bz)))
        rt = 1.0 / (1.0 + np.exp(-(wr @ xt + ur @ hp + br)))
        hct = np.tanh(wh @ xt + uh @ (rt * hp) + bh)
        ht = (1.0 - zt) * hp + zt * hct
        z[t] = zt
        r[t] = rt
        hc[t] = hct
        h[t] = ht
        hp = ht
    return h, z, r, hc


def _gru_backward(dh_out, x, h, z, r, hc, wz, uz, wr, ur, wh, uh):
    """Reverse scan producing gradients for inputs and all nine weights."""
    T = x.shape[0]
    din = x.shape[1]
    d = h.shape[1]
    dx = np.zeros((T, din))
    dwz = np.zeros((d, din))
    duz = np.zeros((d, d))
    dbz = np.zeros(d)
    dwr = np.zeros((d, din))
    dur = np.zeros((d, d))
    dbr = np.zeros(d)
    dwh = np.zeros((d, din))
    duh = np.zeros((d, d))
    dbh = np.zeros(d)
    carry = np.zeros(d)
    for t in range(T - 1, -1, -1):
        hp = np.zeros(d)
        if t > 0:
            hp = h[t - 1].copy()
        xt = x[t]
        zt = z[t]
        rt = r[t]
        hct = hc[t]
        dh = dh_out[t] + carry
        dz = dh * (hct - hp)
        dhc = dh * zt
        dhp = dh * (1.0 - zt)
        # candidate branch
        dah = dhc * (1.0 - hct * hct)
        dwh += np.outer(dah, xt)
        duh += np.outer(dah, rt * hp)
        dbh += dah
        dx[t] += wh.T @ dah
        drh = uh.T @ dah
        dr = drh * hp
        dhp += drh * rt
        # update gate
        daz = dz * zt * (1.0 - zt)
        dwz += np.outer(daz, xt)
        duz += np.outer(daz, hp)
        dbz += daz
        dx[t] += wz.T @ daz
        dhp += uz.T @ daz
        # reset gate
        dar = dr * rt * (1.0 - rt)
        dwr += np.outer(dar, xt)
        dur += np.outer(dar, hp)
        dbr += dar
        dx[t] += wr.T @ dar
        dhp += ur.T @ dar
        carry = dhp
    return dx, dwz, duz, dbz, dwr, dur, dbr, dwh, duh, dbh


def _gaussian_gram_forward(zm, sigma):
    """K[i, j] = exp(-||z_i - z_j||^2 / (2 sigma^2)) for rows of zm."""
    n = zm.shape[0]
    K = np.empty((n, n))
    c = 1.0 / (2.0 * sigma * sigma)
    for i in range(n):
        K[i, i] = 1.0
        for j in range(i + 1, n):
            diff = zm[i] - zm[j]
            v = np.exp(-c * np.dot(diff, diff))
            K[i, j] = v
            K[j, i] = v
    return K


def _gaussian_gram_backward(dK, zm, K, sigma):
    n = zm.shape[0]
    d = zm.shape[1]
    dz = np.zeros((n, d))
    inv = 1.0 / (sigma * sigma)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = (dK[i, j] + dK[j, i]) * K[i, j] * inv
            dz[i] += w * (zm[j] - zm[i])
    return dz


gru_forward = _maybe_jit(_gru_forward)
gru_backward = _maybe_jit(_gru_backward)
gaussian_gram_forward = _maybe_jit(_gaussian_gram_forward)
gaussian_gram_backward = _maybe_jit(_gaussian_gram_backward)


def pairwise_distances(zm: np.ndarray) -> np.ndarray:
    """Euclidean distances between all row pairs, [n, n]. Not differentiated."""
    sq = np.sum(zm * zm, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (zm @ zm.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def median_bandwidth(zm: np.ndarray) -> float:
    """Median off-diagonal pairwise distance; 1.0 when the median is 0."""
    n = zm.shape[0]
    if n < 2:
        return 1.0
    dist = pairwise_distances(zm)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(dist[iu]))
    return med if med > 0.0 else 1.0
