"""Embedding and text providers.

A provider implements ``outputs_for_frame(video_id, frame_id, pixels, grid)``
returning one ProviderOutput per grid patch; a text provider implements
``embed(text)`` returning a unit vector of the collection dimension.  The
synthetic pair shares per-class directions so that the text token
``class:N`` lands near the patch embeddings planted with label N.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict

import numpy as np

from .errors import EmptyQueryError, ProviderDimensionMismatchError
from .model import normalize
from .summary import ProviderOutput, read_exchange_lines

# stream-domain separators so the class, patch, and text draws never collide
_CLASS_STREAM = 1
_PATCH_STREAM = 2
_TEXT_STREAM = 3


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) & (1 << 63) - 1 for e in entropy]))


def class_direction(seed: int, label: int, dim: int) -> np.ndarray:
    """Deterministic unit vector acting as the embedding centroid of a class."""
    draw = _rng(seed, _CLASS_STREAM, label).standard_normal(dim)
    return normalize(draw)


class SyntheticProvider:
    """Deterministic per-patch embeddings keyed by (seed, class label, patch).

    The class label of a patch is read from channel 0 of the frame's pixels
    (synthetic frames paint one label per patch cell).  Embeddings are the
    class direction plus seeded Gaussian noise; box offsets are uniform in
    [-S/4, S/4].  Safe for concurrent per-frame use: all state is read-only.
    """

    concurrent_safe = True

    def __init__(self, seed: int, dim: int = 64, noise: float = 0.05):
        self.seed = seed
        self.dim = dim
        self.noise = noise
        self._cache: dict = {}

    def _patch_output(self, label: int, patch_index: int, span: float) -> ProviderOutput:
        key = (label, patch_index)
        cached = self._cache.get(key)
        if cached is None:
            rng = _rng(self.seed, _PATCH_STREAM, label, patch_index)
            raw = class_direction(self.seed, label, self.dim) + self.noise * rng.standard_normal(self.dim)
            offset = tuple(rng.uniform(-span, span, size=4))
            cached = self._cache[key] = (raw, offset)
        raw, offset = cached
        return ProviderOutput(embedding=raw.copy(), box_offset=offset)

    def outputs_for_frame(self, video_id, frame_id, pixels, grid):
        span = grid.patch_size / 4.0
        outputs = []
        for k in range(grid.num_patches):
            row, col = divmod(k, grid.cols)
            label = int(pixels[row * grid.patch_size, col * grid.patch_size, 0])
            outputs.append(self._patch_output(label, k, span))
        return outputs


class FileProvider:
    """Provider backed by a precomputed embedding-exchange JSONL file."""

    concurrent_safe = True

    def __init__(self, path):
        self.path = path
        self._by_frame = defaultdict(dict)
        for lineno, rec in read_exchange_lines(path):
            key = (str(rec["video_id"]), str(rec["frame_id"]))
            self._by_frame[key][int(rec["patch_index"])] = (
                np.asarray(rec["embedding"], dtype=np.float32),
                [float(v) for v in rec["box"]],
            )

    def outputs_for_frame(self, video_id, frame_id, pixels, grid):
        stored = self._by_frame.get((video_id, frame_id))
        if stored is None:
            raise ProviderDimensionMismatchError(
                f"{self.path} has no records for frame ({video_id!r}, {frame_id!r})"
            )
        outputs = []
        for k in range(grid.num_patches):
            if k not in stored:
                raise ProviderDimensionMismatchError(
                    f"{self.path} missing patch {k} of frame {frame_id!r}"
                )
            emb, box = stored[k]
            default = grid.default_boxes[k]
            offset = (
                box[0] - default.x_min,
                box[1] - default.y_min,
                box[2] - default.x_max,
                box[3] - default.y_max,
            )
            outputs.append(ProviderOutput(embedding=emb, box_offset=offset))
        return outputs


class SyntheticTextProvider:
    """Deterministic text embeddings aligned with SyntheticProvider.

    ``class:N`` maps onto the class-N direction exactly; any other text maps
    to a stable direction derived from its SHA-256 digest.
    """

    def __init__(self, seed: int, dim: int = 64):
        self.seed = seed
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyQueryError("query text is empty")
        token = text.strip()
        if token.startswith("class:"):
            try:
                label = int(token.split(":", 1)[1])
            except ValueError:
                label = None
            if label is not None:
                return class_direction(self.seed, label, self.dim)
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
        draw = _rng(self.seed, _TEXT_STREAM, *words).standard_normal(self.dim)
        return normalize(draw)
