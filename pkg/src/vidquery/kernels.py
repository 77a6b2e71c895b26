"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The backend is chosen once at import time from the ``VIDQUERY_NUMBA``
environment variable: ``0`` forces the numpy path, ``1`` requires numba,
anything else (or unset) uses numba when it is importable.  Both paths
accumulate in float64; they agree to ~1e-12 relative (numpy reduces with a
pairwise tree, numba sequentially) and each is deterministic on its own.
``vidquery bench --suite kernels`` times them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_FLAG = os.environ.get("VIDQUERY_NUMBA", "auto").strip().lower()
if _FLAG in ("0", "false", "off"):
    USE_NUMBA = False
elif _FLAG in ("1", "true", "on"):
    if not HAS_NUMBA:
        raise ImportError("VIDQUERY_NUMBA=1 but numba is not importable")
    USE_NUMBA = True
else:
    USE_NUMBA = HAS_NUMBA


def nearest_centroids_np(x, centroids):
    """Index of the nearest centroid (squared L2) for each row of ``x``.

    Ties resolve to the smallest centroid index.  Returns ``(assign, sqdist)``
    where ``sqdist[i]`` is the squared distance to the winning centroid.

    Small codebooks use the exact elementwise form, chunked over rows to
    bound the (rows, centroids, dim) scratch buffer; large codebooks switch
    to the expansion |x|^2 - 2 x.c + |c|^2 through BLAS, clamped at zero
    (the expansion can go a hair negative for near-coincident points).
    """
    if centroids.shape[0] > 128:
        x64 = x.astype(np.float64)
        c64 = centroids.astype(np.float64)
        d2 = (
            (x64 * x64).sum(axis=1)[:, None]
            - 2.0 * (x64 @ c64.T)
            + (c64 * c64).sum(axis=1)[None, :]
        )
        np.maximum(d2, 0.0, out=d2)
        assign = d2.argmin(axis=1)
        return assign.astype(np.int64), d2[np.arange(len(x)), assign]
    n = x.shape[0]
    c64 = centroids[None, :, :].astype(np.float64)
    assign = np.empty(n, dtype=np.int64)
    sqdist = np.empty(n, dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, centroids.shape[0] * centroids.shape[1]))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = x[lo:hi, None, :].astype(np.float64) - c64
        d2 = (diff * diff).sum(axis=2)
        block = d2.argmin(axis=1)
        assign[lo:hi] = block
        sqdist[lo:hi] = d2[np.arange(hi - lo), block]
    return assign, sqdist


def cluster_sums_np(x, assign, n_clusters):
    """Per-cluster component sums and member counts for a hard assignment."""
    counts = np.bincount(assign, minlength=n_clusters).astype(np.int64)
    sums = np.empty((n_clusters, x.shape[1]), dtype=np.float64)
    for j in range(x.shape[1]):
        sums[:, j] = np.bincount(
            assign, weights=x[:, j].astype(np.float64), minlength=n_clusters
        )
    return sums, counts


def approx_scores_np(cand, codes, residuals, lut, q):
    """Residual-corrected approximate scores for the candidate handles.

    score[i] = sum_p lut[p, code] + q . residual_row, accumulated in float64.
    """
    sub = codes[cand].astype(np.int64)
    lut_part = lut[np.arange(lut.shape[0])[None, :], sub].sum(axis=1)
    res_part = (residuals[cand].astype(np.float64) * q).sum(axis=1)
    return lut_part + res_part


def mean_abs_diff_np(a, b):
    """Sum of absolute differences between two uint8 grids, as int64."""
    return int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())


if HAS_NUMBA:

    @njit(cache=True)
    def _nearest_centroids_nb(x, centroids):
        n = x.shape[0]
        m, dim = centroids.shape
        assign = np.empty(n, dtype=np.int64)
        sqdist = np.empty(n, dtype=np.float64)
        for i in range(n):
            best = 0
            best_d = np.inf
            for c in range(m):
                acc = 0.0
                for j in range(dim):
                    diff = np.float64(x[i, j]) - np.float64(centroids[c, j])
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = c
            assign[i] = best
            sqdist[i] = best_d
        return assign, sqdist

    @njit(cache=True)
    def _cluster_sums_nb(x, assign, n_clusters):
        sums = np.zeros((n_clusters, x.shape[1]), dtype=np.float64)
        counts = np.zeros(n_clusters, dtype=np.int64)
        for i in range(x.shape[0]):
            c = assign[i]
            counts[c] += 1
            for j in range(x.shape[1]):
                sums[c, j] += np.float64(x[i, j])
        return sums, counts

    @njit(cache=True)
    def _approx_scores_nb(cand, codes, residuals, lut, q):
        n = cand.shape[0]
        subspaces = codes.shape[1]
        dim = residuals.shape[1]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            h = cand[i]
            lut_part = 0.0
            for p in range(subspaces):
                lut_part += lut[p, codes[h, p]]
            res_part = 0.0
            for j in range(dim):
                res_part += np.float64(residuals[h, j]) * q[j]
            out[i] = lut_part + res_part
        return out

    @njit(cache=True)
    def _mean_abs_diff_nb(a, b):
        total = np.int64(0)
        for i in range(a.size):
            d = np.int64(a.flat[i]) - np.int64(b.flat[i])
            total += d if d >= 0 else -d
        return total

    def nearest_centroids_nb(x, centroids):
        assign, sqdist = _nearest_centroids_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(centroids)
        )
        return assign, sqdist

    def cluster_sums_nb(x, assign, n_clusters):
        return _cluster_sums_nb(np.ascontiguousarray(x), assign, n_clusters)

    def approx_scores_nb(cand, codes, residuals, lut, q):
        return _approx_scores_nb(cand, codes, residuals, lut, q)

    def mean_abs_diff_nb(a, b):
        return int(_mean_abs_diff_nb(np.ascontiguousarray(a), np.ascontiguousarray(b)))


if USE_NUMBA:
    nearest_centroids = nearest_centroids_nb
    cluster_sums = cluster_sums_nb
    approx_scores = approx_scores_nb
    mean_abs_diff = mean_abs_diff_nb
    BACKEND = "numba"
else:
    nearest_centroids = nearest_centroids_np
    cluster_sums = cluster_sums_np
    approx_scores = approx_scores_np
    mean_abs_diff = mean_abs_diff_np
    BACKEND = "numpy"
