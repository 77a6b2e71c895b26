"""Shared domain types and the similarity/distance algebra.

Embeddings are numpy arrays: float32 at rest (records, index, files), float64
inside accumulations (norms, dot products).  All types are immutable after
construction and safe to share across concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, OutOfRangeError, ZeroVectorError


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, preserving direction.

    Computes in float64 and returns float64 so the result's norm is within
    1e-9 of 1; round to float32 only when storing.  Raises ``ZeroVectorError``
    for all-zero input (no direction; callers drop the patch).
    """
    v64 = np.asarray(v, dtype=np.float64)
    if v64.ndim != 1 or v64.size == 0:
        raise DimensionMismatchError(f"expected a non-empty 1-d vector, got shape {v64.shape}")
    norm = math.sqrt(float(np.dot(v64, v64)))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize an all-zero vector")
    if not math.isfinite(norm):
        raise ValueError("vector has non-finite components")
    return v64 / norm


def similarity(q: np.ndarray, c: np.ndarray) -> float:
    """Dot product of two unit vectors, i.e. their cosine similarity."""
    q = np.asarray(q)
    c = np.asarray(c)
    if q.shape != c.shape:
        raise DimensionMismatchError(f"dimension mismatch: {q.shape} vs {c.shape}")
    return float(np.dot(q.astype(np.float64), c.astype(np.float64)))


def distance_from_similarity(s: float) -> float:
    """Euclidean distance between unit vectors with dot product ``s``.

    d = sqrt(2 - 2s); monotone decreasing in s.
    """
    if abs(s) > 1.0 + 1e-9:
        raise OutOfRangeError(f"similarity {s} outside [-1, 1]")
    s = min(1.0, max(-1.0, s))
    return math.sqrt(2.0 - 2.0 * s)


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Direct L2 distance, accumulated in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return math.sqrt(float(np.dot(diff, diff)))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, corner representation."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"box corners out of order: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def clamped(self, width: float, height: float) -> "BoundingBox":
        """Box intersected with the [0, width] x [0, height] frame bounds."""
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        return BoundingBox(x0, y0, max(x0, x1), max(y0, y1))

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(values)}")
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))


@dataclass(frozen=True)
class PatchIdentity:
    """Globally unique key of one patch: (video, frame, patch index)."""

    video_id: str
    frame_id: str
    patch_index: int

    def __post_init__(self):
        if self.patch_index < 0:
            raise ValueError(f"patch_index must be >= 0, got {self.patch_index}")


@dataclass(eq=False)
class PatchRecord:
    """One patch's reduced embedding, predicted box, and identity.

    ``embedding`` is a unit-norm float32 array of the collection-wide
    dimension.
    """

    identity: PatchIdentity
    embedding: np.ndarray
    box: BoundingBox

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float32)
        if self.embedding.ndim != 1 or self.embedding.size == 0:
            raise DimensionMismatchError(
                f"embedding must be a non-empty 1-d vector, got shape {self.embedding.shape}"
            )
