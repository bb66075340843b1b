"""Fused per-edge kernels for the attention ops.

These are the only hot loops in the engine that numpy cannot express
without materializing |E| x F intermediates, so they get numba-compiled
scatter/gather implementations. The numpy fallbacks are semantically
identical (same accumulation order is NOT guaranteed between the two
backends, but both are deterministic for a fixed backend).
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _pair_score_fwd_nb(left, right, vec, src, dst, slope):
    n_edges = src.shape[0]
    width = left.shape[1]
    out = np.empty(n_edges)
    for e in range(n_edges):
        i = src[e]
        j = dst[e]
        s = 0.0
        for f in range(width):
            v = left[i, f] + right[j, f]
            if v < 0.0:
                v *= slope
            s += v * vec[f]
        out[e] = s
    return out


@njit(cache=True)
def _pair_score_bwd_nb(left, right, vec, src, dst, slope, gout):
    n_edges = src.shape[0]
    width = left.shape[1]
    g_left = np.zeros_like(left)
    g_right = np.zeros_like(right)
    g_vec = np.zeros_like(vec)
    for e in range(n_edges):
        i = src[e]
        j = dst[e]
        g = gout[e]
        for f in range(width):
            v = left[i, f] + right[j, f]
            if v < 0.0:
                g_vec[f] += slope * v * g
                d = slope * vec[f] * g
            else:
                g_vec[f] += v * g
                d = vec[f] * g
            g_left[i, f] += d
            g_right[j, f] += d
    return g_left, g_right, g_vec


@njit(cache=True)
def _abs_diff_score_fwd_nb(feats, vec, src, dst):
    n_edges = src.shape[0]
    width = feats.shape[1]
    out = np.empty(n_edges)
    for e in range(n_edges):
        i = src[e]
        j = dst[e]
        s = 0.0
        for f in range(width):
            d = feats[i, f] - feats[j, f]
            if d < 0.0:
                d = -d
            s += d * vec[f]
        out[e] = s
    return out


@njit(cache=True)
def _abs_diff_score_bwd_nb(feats, vec, src, dst, gout):
    n_edges = src.shape[0]
    width = feats.shape[1]
    g_feats = np.zeros_like(feats)
    g_vec = np.zeros_like(vec)
    for e in range(n_edges):
        i = src[e]
        j = dst[e]
        g = gout[e]
        for f in range(width):
            d = feats[i, f] - feats[j, f]
            if d < 0.0:
                g_vec[f] -= d * g  # |d| = -d
                s = -vec[f] * g
            else:
                g_vec[f] += d * g
                s = vec[f] * g
            # d(|z_i - z_j|)/dz_i = sign, /dz_j = -sign; sign(0) -> 0
            if d != 0.0:
                g_feats[i, f] += s
                g_feats[j, f] -= s
    return g_feats, g_vec


@njit(cache=True)
def _aggregate_fwd_nb(weights, feats, src, dst, n_rows):
    out = np.zeros((n_rows, feats.shape[1]))
    for e in range(src.shape[0]):
        w = weights[e]
        i = src[e]
        j = dst[e]
        for k in range(feats.shape[1]):
            out[i, k] += w * feats[j, k]
    return out


@njit(cache=True)
def _aggregate_bwd_nb(weights, feats, src, dst, gout):
    n_edges = src.shape[0]
    g_weights = np.empty(n_edges)
    g_feats = np.zeros_like(feats)
    for e in range(n_edges):
        i = src[e]
        j = dst[e]
        w = weights[e]
        acc = 0.0
        for k in range(feats.shape[1]):
            g = gout[i, k]
            acc += g * feats[j, k]
            g_feats[j, k] += w * g
        g_weights[e] = acc
    return g_weights, g_feats


# ---------------------------------------------------------------------------
# numpy fallbacks (chunked so |E| x F temporaries stay bounded)

_CHUNK = 1 << 14


def _leaky(x, slope):
    return np.where(x >= 0.0, x, slope * x)


def _pair_score_fwd_np(left, right, vec, src, dst, slope):
    out = np.empty(src.shape[0])
    for a in range(0, src.shape[0], _CHUNK):
        b = a + _CHUNK
        s = left[src[a:b]] + right[dst[a:b]]
        out[a:b] = _leaky(s, slope) @ vec
    return out


def _pair_score_bwd_np(left, right, vec, src, dst, slope, gout):
    g_left = np.zeros_like(left)
    g_right = np.zeros_like(right)
    g_vec = np.zeros_like(vec)
    for a in range(0, src.shape[0], _CHUNK):
        b = a + _CHUNK
        s = left[src[a:b]] + right[dst[a:b]]
        g_vec += _leaky(s, slope).T @ gout[a:b]
        d = np.where(s >= 0.0, 1.0, slope) * (gout[a:b, None] * vec[None, :])
        np.add.at(g_left, src[a:b], d)
        np.add.at(g_right, dst[a:b], d)
    return g_left, g_right, g_vec


def _abs_diff_score_fwd_np(feats, vec, src, dst):
    out = np.empty(src.shape[0])
    for a in range(0, src.shape[0], _CHUNK):
        b = a + _CHUNK
        d = feats[src[a:b]] - feats[dst[a:b]]
        out[a:b] = np.abs(d) @ vec
    return out


def _abs_diff_score_bwd_np(feats, vec, src, dst, gout):
    g_feats = np.zeros_like(feats)
    g_vec = np.zeros_like(vec)
    for a in range(0, src.shape[0], _CHUNK):
        b = a + _CHUNK
        d = feats[src[a:b]] - feats[dst[a:b]]
        g_vec += np.abs(d).T @ gout[a:b]
        s = np.sign(d) * (gout[a:b, None] * vec[None, :])
        np.add.at(g_feats, src[a:b], s)
        np.add.at(g_feats, dst[a:b], -s)
    return g_feats, g_vec


def _aggregate_fwd_np(weights, feats, src, dst, n_rows):
    from scipy.sparse import csr_matrix

    mat = csr_matrix(
        (weights, (src, dst)), shape=(n_rows, feats.shape[0])
    )
    return np.asarray(mat @ feats)


def _aggregate_bwd_np(weights, feats, src, dst, gout):
    from scipy.sparse import csr_matrix

    g_weights = np.einsum("ek,ek->e", gout[src], feats[dst])
    mat = csr_matrix(
        (weights, (dst, src)), shape=(feats.shape[0], gout.shape[0])
    )
    g_feats = np.asarray(mat @ gout)
    return g_weights, g_feats


if HAVE_NUMBA:
    pair_score_fwd = _pair_score_fwd_nb
    pair_score_bwd = _pair_score_bwd_nb
    abs_diff_score_fwd = _abs_diff_score_fwd_nb
    abs_diff_score_bwd = _abs_diff_score_bwd_nb
    aggregate_fwd = _aggregate_fwd_nb
    aggregate_bwd = _aggregate_bwd_nb
else:  # pragma: no cover
    pair_score_fwd = _pair_score_fwd_np
    pair_score_bwd = _pair_score_bwd_np
    abs_diff_score_fwd = _abs_diff_score_fwd_np
    abs_diff_score_bwd = _abs_diff_score_bwd_np
    aggregate_fwd = _aggregate_fwd_np
    aggregate_bwd = _aggregate_bwd_np
