"""Synthetic frames, sequences, and vector corpora for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .model import BoundingBox, PatchIdentity, PatchRecord
from .summary import Frame, FrameSequence, PatchCollection


def label_frame(frame_id: str, timestamp: float, labels, patch_size: int) -> Frame:
    """Frame whose channel 0 carries one integer class label per patch cell."""
    labels = np.asarray(labels, dtype=np.uint8)
    rows, cols = labels.shape
    pixels = np.zeros((rows * patch_size, cols * patch_size, 3), dtype=np.uint8)
    pixels[:, :, 0] = np.kron(labels, np.ones((patch_size, patch_size), dtype=np.uint8))
    return Frame(frame_id=frame_id, pixels=pixels, timestamp=timestamp)


def uniform_sequence(
    video_id: str, num_frames: int, rows: int, cols: int, patch_size: int, label: int = 0
) -> FrameSequence:
    """Sequence where every patch of every frame carries the same label."""
    labels = np.full((rows, cols), label, dtype=np.uint8)
    frames = [
        label_frame(f"f{i:06d}", float(i), labels, patch_size) for i in range(num_frames)
    ]
    return FrameSequence(video_id=video_id, frames=frames)


def planted_sequence(
    seed: int,
    num_frames: int,
    rows: int,
    cols: int,
    patch_size: int,
    background_label: int = 0,
    planted_label: int = 3,
    planted_frame: int | None = None,
):
    """Background-label sequence with one frame fully planted with an object class.

    Returns (sequence, planted_frame_id).  With ``planted_frame`` unset, the
    position is drawn from the seed.
    """
    if planted_frame is None:
        rng = np.random.default_rng(seed)
        planted_frame = int(rng.integers(num_frames))
    frames = []
    for i in range(num_frames):
        label = planted_label if i == planted_frame else background_label
        labels = np.full((rows, cols), label, dtype=np.uint8)
        frames.append(label_frame(f"f{i:06d}", float(i), labels, patch_size))
    seq = FrameSequence(video_id=f"synthetic-{seed}", frames=frames)
    return seq, f"f{planted_frame:06d}"


def random_unit_vectors(n: int, dim: int, seed: int) -> np.ndarray:
    """(n, dim) float32 rows of unit norm, drawn from a seeded Gaussian."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)


def collection_from_vectors(
    vectors: np.ndarray, patches_per_frame: int = 8, video_id: str = "synthetic"
) -> PatchCollection:
    """Wrap raw vectors as a collection, several patches per synthetic frame."""
    col = PatchCollection()
    box = BoundingBox(0.0, 0.0, 1.0, 1.0)
    for i, v in enumerate(vectors):
        frame = f"f{i // patches_per_frame:08d}"
        col.records.append(
            PatchRecord(PatchIdentity(video_id, frame, i % patches_per_frame), v, box)
        )
        col.timestamps.setdefault((video_id, frame), float(i // patches_per_frame))
    col.stats.patches = len(col.records)
    col.stats.keyframes = len(col.timestamps)
    col.stats.frames = col.stats.keyframes
    return col
