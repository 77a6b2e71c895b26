"""Product quantization: subspace split, codebook training, codes, residuals.

Codebooks are a (subspaces, centroids, sub_dim) float32 array; codes are
(..., subspaces) uint16.  Training runs Lloyd's iterations in float64 with
k-means++ seeding, deterministic for a fixed seed, with all ties broken by
smallest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, InsufficientTrainingDataError

CODE_DTYPE = np.uint16


@dataclass(frozen=True)
class PQConfig:
    """Quantizer shape: dim = subspaces * sub_dim, ``centroids`` per subspace."""

    dim: int = 64
    subspaces: int = 8
    centroids: int = 16
    train_iters: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.subspaces <= 0:
            raise ValueError("dim and subspaces must be positive")
        if self.dim % self.subspaces != 0:
            raise ValueError(
                f"dim {self.dim} is not divisible into {self.subspaces} subspaces"
            )
        if self.centroids < 1:
            raise ValueError("centroids must be >= 1")
        if self.centroids > np.iinfo(CODE_DTYPE).max + 1:
            raise ValueError(f"centroids must fit {CODE_DTYPE.__name__} codes")
        if self.train_iters < 1:
            raise ValueError("train_iters must be >= 1")

    @property
    def sub_dim(self) -> int:
        return self.dim // self.subspaces


def split(v: np.ndarray, config: PQConfig) -> np.ndarray:
    """View ``v`` as (subspaces, sub_dim); concatenation reproduces it exactly."""
    v = np.asarray(v)
    if v.shape != (config.dim,):
        raise DimensionMismatchError(f"expected shape ({config.dim},), got {v.shape}")
    return v.reshape(config.subspaces, config.sub_dim)


def _as_matrix(vectors, config: PQConfig) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.dim:
        raise DimensionMismatchError(f"expected (n, {config.dim}) vectors, got {x.shape}")
    return np.ascontiguousarray(x)


def _kmeans_pp(x64: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared-distance sampling."""
    n = x64.shape[0]
    cents = np.empty((k, x64.shape[1]), dtype=np.float64)
    idx = int(rng.integers(n))
    cents[0] = x64[idx]
    d2 = ((x64 - cents[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        cents[j] = x64[idx]
        d2 = np.minimum(d2, ((x64 - cents[j]) ** 2).sum(axis=1))
    return cents


def _lloyd(x32: np.ndarray, cents: np.ndarray, iters: int):
    """Lloyd's iterations on one subspace; returns float64 centroids + history.

    Stops early once assignments repeat.  Empty clusters are repaired by
    moving the centroid onto the point currently farthest from its own
    centroid, which keeps the recorded distortion non-increasing.
    """
    k = cents.shape[0]
    history = []
    prev = None
    for _ in range(iters):
        # centroids stay float64 here so the recorded descent is exact
        assign, d2 = kernels.nearest_centroids(x32, cents)
        history.append(float(d2.sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        sums, counts = kernels.cluster_sums(x32, assign, k)
        occupied = counts > 0
        cents[occupied] = sums[occupied] / counts[occupied, None]
        avail = d2.copy()
        for c in np.flatnonzero(~occupied):
            far = int(np.argmax(avail))
            cents[c] = x32[far].astype(np.float64)
            avail[far] = -1.0
    return cents, history


def train_codebooks(vectors, config: PQConfig, *, collect_history: bool = False):
    """Train one codebook per subspace on the vector collection.

    Returns a (subspaces, centroids, sub_dim) float32 array; with
    ``collect_history`` also a per-subspace list of per-iteration distortions
    (within-cluster sums of squared distances).
    """
    x = _as_matrix(vectors, config)
    if x.shape[0] < config.centroids:
        raise InsufficientTrainingDataError(
            f"{x.shape[0]} training vectors < {config.centroids} centroids"
        )
    codebooks = np.empty(
        (config.subspaces, config.centroids, config.sub_dim), dtype=np.float32
    )
    histories = []
    mask = (1 << 63) - 1
    for p in range(config.subspaces):
        sub = np.ascontiguousarray(x[:, p * config.sub_dim : (p + 1) * config.sub_dim])
        rng = np.random.default_rng(np.random.SeedSequence([config.seed & mask, p]))
        cents = _kmeans_pp(sub.astype(np.float64), config.centroids, rng)
        cents, history = _lloyd(sub, cents, config.train_iters)
        codebooks[p] = cents.astype(np.float32)
        histories.append(history)
    if collect_history:
        return codebooks, histories
    return codebooks


def encode(vectors, codebooks: np.ndarray) -> np.ndarray:
    """Nearest-centroid code per subspace; ties go to the smallest index.

    Accepts one vector (dim,) or a batch (n, dim); the code shape follows.
    """
    subspaces, _, sub_dim = codebooks.shape
    single = np.asarray(vectors).ndim == 1
    x = np.asarray(vectors, dtype=np.float32)
    if single:
        x = x[None, :]
    if x.shape[1] != subspaces * sub_dim:
        raise DimensionMismatchError(
            f"expected dim {subspaces * sub_dim}, got {x.shape[1]}"
        )
    x = np.ascontiguousarray(x)
    codes = np.empty((x.shape[0], subspaces), dtype=CODE_DTYPE)
    for p in range(subspaces):
        sub = np.ascontiguousarray(x[:, p * sub_dim : (p + 1) * sub_dim])
        assign, _ = kernels.nearest_centroids(sub, codebooks[p])
        codes[:, p] = assign.astype(CODE_DTYPE)
    return codes[0] if single else codes


def assigned_centroids(code: np.ndarray, codebooks: np.ndarray) -> np.ndarray:
    """Gather the (subspaces, sub_dim) centroid block selected by ``code``."""
    return codebooks[np.arange(codebooks.shape[0]), np.asarray(code, dtype=np.int64)]


def residual(v: np.ndarray, code: np.ndarray, codebooks: np.ndarray) -> np.ndarray:
    """Per-subspace difference between ``v`` and its assigned centroids.

    Residuals are kept in full (float64) precision so that centroid plus
    residual reproduces the stored vector; nothing quantizes them further.
    """
    subspaces, _, sub_dim = codebooks.shape
    parts = np.asarray(v, dtype=np.float32).reshape(subspaces, sub_dim)
    return parts.astype(np.float64) - assigned_centroids(code, codebooks).astype(np.float64)


def _nudged_residual(target: np.ndarray, cents: np.ndarray) -> np.ndarray:
    """float64 residual such that cents + residual == target, bit for bit.

    The plain difference can be one ulp off after the round trip when the
    component magnitudes are far apart; a one-step nextafter nudge repairs
    essentially every such component.
    """
    target = target.astype(np.float64)
    cents = cents.astype(np.float64)
    res = target - cents
    for direction in (np.inf, -np.inf):
        bad = (cents + res) != target
        if not bad.any():
            break
        nudged = np.nextafter(res, direction)
        fixes = bad & ((cents + nudged) == target)
        res = np.where(fixes, nudged, res)
    return res


def reconstructing_residual(
    v: np.ndarray, code: np.ndarray, codebooks: np.ndarray
) -> np.ndarray:
    """Residual adjusted so centroid + residual reproduces ``v`` exactly."""
    subspaces, _, sub_dim = codebooks.shape
    target = np.asarray(v, dtype=np.float32).reshape(subspaces, sub_dim)
    return _nudged_residual(target, assigned_centroids(code, codebooks))


def reconstructing_residuals_batch(
    vectors: np.ndarray, codes: np.ndarray, codebooks: np.ndarray
) -> np.ndarray:
    """(n, dim) float64 residuals whose reconstruction is exactly ``vectors``."""
    subspaces, _, sub_dim = codebooks.shape
    x = np.asarray(vectors, dtype=np.float32)
    target = x.reshape(x.shape[0], subspaces, sub_dim)
    cents = codebooks[
        np.arange(subspaces)[None, :], np.asarray(codes, dtype=np.int64)
    ]
    return _nudged_residual(target, cents).reshape(x.shape[0], subspaces * sub_dim)


def reconstruct(code: np.ndarray, res: np.ndarray, codebooks: np.ndarray) -> np.ndarray:
    """Full float64 vector from code + residual: centroid + residual per part."""
    parts = assigned_centroids(code, codebooks).astype(np.float64) + np.asarray(
        res, dtype=np.float64
    )
    return parts.reshape(-1)


def build_lookup_table(q: np.ndarray, codebooks: np.ndarray) -> np.ndarray:
    """Per-(subspace, centroid) dot products with the query, float64.

    scores[p, m] = q_p . centroid_{m,p}; O(subspaces) approximate scoring reads
    this table instead of touching full vectors.
    """
    subspaces, _, sub_dim = codebooks.shape
    q = np.asarray(q)
    if q.shape != (subspaces * sub_dim,):
        raise DimensionMismatchError(
            f"expected query dim {subspaces * sub_dim}, got {q.shape}"
        )
    q_parts = q.astype(np.float64).reshape(subspaces, 1, sub_dim)
    return (codebooks.astype(np.float64) * q_parts).sum(axis=2)


def quantization_distortion(vectors, codebooks: np.ndarray) -> float:
    """Sum of squared code-reconstruction errors over the collection."""
    subspaces, _, sub_dim = codebooks.shape
    x = np.asarray(vectors, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    total = 0.0
    for p in range(subspaces):
        sub = np.ascontiguousarray(x[:, p * sub_dim : (p + 1) * sub_dim])
        _, d2 = kernels.nearest_centroids(sub, codebooks[p])
        total += float(d2.sum())
    return total
