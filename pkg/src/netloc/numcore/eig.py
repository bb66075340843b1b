"""Symmetric eigendecomposition via cyclic Jacobi rotations.

Uses the round-robin (tournament) pair ordering so each sweep applies
n-1 batches of ~n/2 mutually disjoint rotations; the rotations in a
batch commute exactly, letting the row/column updates run as vectorized
numpy fancy-indexing instead of a per-pair Python loop. Deterministic:
fixed ordering, no pivot search.
"""

import numpy as np

from ..errors import NumericError


def _round_robin_batches(n):
    """Yield lists of disjoint (p, q) pairs covering all pairs once."""
    players = list(range(n)) if n % 2 == 0 else list(range(n)) + [-1]
    m = len(players)
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a != -1 and b != -1:
                pairs.append((a, b) if a < b else (b, a))
        yield pairs
        players = [players[0], players[-1]] + players[1:-1]


def eig_symmetric(mat, sym_tol=1e-10, off_tol=1e-14, max_sweeps=50):
    """Eigendecomposition of a symmetric matrix.

    Returns (w, V) with eigenvalues `w` ascending and orthonormal
    eigenvectors in the columns of V, so mat @ V = V @ diag(w).
    Raises NumericError if the input is not symmetric within sym_tol.
    """
    a = np.array(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > sym_tol * scale:
        raise NumericError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v

    batches = list(_round_robin_batches(n))
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(max(norm**2 - np.sum(np.diag(a) ** 2), 0.0))
        if off <= off_tol * norm:
            break
        for pairs in batches:
            p = np.fromiter((x for x, _ in pairs), dtype=np.int64)
            q = np.fromiter((y for _, y in pairs), dtype=np.int64)
            apq = a[p, q]
            live = np.abs(apq) > 1e-300
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            app = a[p, p]
            aqq = a[q, q]
            # stable rotation: t = sign(theta) / (|theta| + sqrt(theta^2+1))
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # rows: disjoint pairs -> simultaneous update is exact
            rp = a[p, :]
            rq = a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p]
            cq = a[:, q]
            a[:, p] = cp * c[None, :] - cq * s[None, :]
            a[:, q] = cp * s[None, :] + cq * c[None, :]
            # exact zeros on the rotated pivots keep the sweep stable
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp = v[:, p]
            vq = v[:, q]
            v[:, p] = vp * c[None, :] - vq * s[None, :]
            v[:, q] = vp * s[None, :] + vq * c[None, :]
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    # deterministic sign: largest-magnitude component of each column positive
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(n)])
    signs[signs == 0] = 1.0
    return w, v * signs[None, :]
