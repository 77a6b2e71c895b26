"""Frame sequences to patch collections: keyframes, grids, per-patch records.

Frames are (H, W, 3) uint8 arrays.  An embedding provider turns one frame
into per-patch outputs; this module normalizes, clamps boxes, and assembles
the collection that indexing consumes.  The JSONL exchange format lets
externally computed embeddings enter the same pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    DuplicatePatchError,
    EmptySequenceError,
    PatchLargerThanFrameError,
    ProviderDimensionMismatchError,
    ZeroVectorError,
)
from .model import BoundingBox, PatchIdentity, PatchRecord, normalize


@dataclass(frozen=True)
class Frame:
    """One decoded frame: id, (H, W, 3) uint8 pixels, timestamp in seconds."""

    frame_id: str
    pixels: np.ndarray
    timestamp: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        object.__setattr__(self, "pixels", px)


@dataclass
class FrameSequence:
    """Ordered frames of one video; all share H x W, timestamps increase."""

    video_id: str
    frames: list[Frame]

    def __post_init__(self):
        if self.frames:
            shape = self.frames[0].pixels.shape
            for f in self.frames[1:]:
                if f.pixels.shape != shape:
                    raise ValueError(
                        f"frame {f.frame_id} shape {f.pixels.shape} != {shape}"
                    )
            ts = [f.timestamp for f in self.frames]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("timestamps must be strictly increasing")


@dataclass(frozen=True)
class KeyframePolicy:
    """Keyframe selection: every ``interval`` frames, or on content change."""

    kind: str
    interval: int | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.kind == "fixed_interval":
            if self.interval is None or self.interval < 1 or self.threshold is not None:
                raise ValueError("fixed_interval takes interval >= 1 and no threshold")
        elif self.kind == "frame_difference":
            if self.threshold is None or self.threshold <= 0 or self.interval is not None:
                raise ValueError("frame_difference takes threshold > 0 and no interval")
        else:
            raise ValueError(f"unknown keyframe policy {self.kind!r}")

    @classmethod
    def fixed_interval(cls, interval: int) -> "KeyframePolicy":
        return cls(kind="fixed_interval", interval=interval)

    @classmethod
    def frame_difference(cls, threshold: float) -> "KeyframePolicy":
        return cls(kind="frame_difference", threshold=threshold)


@dataclass(frozen=True)
class PatchGrid:
    """Row-major grid of patch_size x patch_size cells with default boxes."""

    patch_size: int
    rows: int
    cols: int
    default_boxes: tuple

    @property
    def num_patches(self) -> int:
        return self.rows * self.cols


@dataclass
class ProviderOutput:
    """One patch's raw embedding plus a pixel offset on its default box."""

    embedding: np.ndarray
    box_offset: tuple


@dataclass
class CollectionStats:
    frames: int = 0
    keyframes: int = 0
    patches: int = 0
    dropped: int = 0


@dataclass
class PatchCollection:
    """All patch records of a run plus per-frame timestamps and counters."""

    records: list[PatchRecord] = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)
    stats: CollectionStats = field(default_factory=CollectionStats)

    def __len__(self) -> int:
        return len(self.records)

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([r.embedding for r in self.records]).astype(np.float32)


def extract_keyframes(seq: FrameSequence, policy: KeyframePolicy) -> list[Frame]:
    """Pick representative frames; the first frame is always included.

    fixed_interval keeps indices 0, interval, 2*interval, ...; frame_difference
    keeps a frame when its mean absolute intensity change against the last
    kept frame, normalized by 255, exceeds the threshold.
    """
    if not seq.frames:
        raise EmptySequenceError(f"video {seq.video_id!r} has no frames")
    if policy.kind == "fixed_interval":
        return seq.frames[:: policy.interval]
    selected = [seq.frames[0]]
    last = seq.frames[0].pixels
    denom = 255.0 * last.size
    for frame in seq.frames[1:]:
        change = kernels.mean_abs_diff(frame.pixels, last) / denom
        if change > policy.threshold:
            selected.append(frame)
            last = frame.pixels
    return selected


def build_patch_grid(height: int, width: int, patch_size: int) -> PatchGrid:
    """Tile the top-left floor(H/S) x floor(W/S) region with S x S boxes."""
    if patch_size <= 0:
        raise ValueError("patch_size must be positive")
    if height < patch_size or width < patch_size:
        raise PatchLargerThanFrameError(
            f"patch size {patch_size} exceeds frame {height}x{width}"
        )
    rows = height // patch_size
    cols = width // patch_size
    boxes = []
    for r in range(rows):
        for c in range(cols):
            x0 = float(c * patch_size)
            y0 = float(r * patch_size)
            boxes.append(BoundingBox(x0, y0, x0 + patch_size, y0 + patch_size))
    return PatchGrid(patch_size=patch_size, rows=rows, cols=cols, default_boxes=tuple(boxes))


def _offset_box(default: BoundingBox, offset, width: float, height: float) -> BoundingBox:
    """Default box plus pixel offsets, clamped to the frame bounds."""
    if len(offset) != 4:
        raise ValueError(f"box offset needs 4 values, got {len(offset)}")
    x0 = min(max(default.x_min + float(offset[0]), 0.0), width)
    y0 = min(max(default.y_min + float(offset[1]), 0.0), height)
    x1 = min(max(default.x_max + float(offset[2]), 0.0), width)
    y1 = min(max(default.y_max + float(offset[3]), 0.0), height)
    return BoundingBox(x0, y0, max(x0, x1), max(y0, y1))


def summarize_frame(video_id: str, frame: Frame, grid: PatchGrid, provider):
    """Run the provider over one frame's grid; returns (records, dropped).

    Zero-vector embeddings are dropped and counted rather than failing the
    frame.  Provider outputs must cover all patches at one consistent
    dimension.
    """
    outputs = provider.outputs_for_frame(video_id, frame.frame_id, frame.pixels, grid)
    if len(outputs) != grid.num_patches:
        raise ProviderDimensionMismatchError(
            f"provider returned {len(outputs)} outputs for {grid.num_patches} patches"
        )
    height = float(frame.pixels.shape[0])
    width = float(frame.pixels.shape[1])
    dim = None
    records = []
    dropped = 0
    for k, out in enumerate(outputs):
        emb = np.asarray(out.embedding)
        if dim is None:
            dim = emb.shape
        elif emb.shape != dim:
            raise ProviderDimensionMismatchError(
                f"patch {k} embedding shape {emb.shape} != {dim}"
            )
        try:
            unit = normalize(emb)
        except ZeroVectorError:
            dropped += 1
            continue
        except ValueError as exc:
            raise ValueError(f"frame {frame.frame_id!r} patch {k}: {exc}") from exc
        box = _offset_box(grid.default_boxes[k], out.box_offset, width, height)
        identity = PatchIdentity(video_id, frame.frame_id, k)
        records.append(PatchRecord(identity, unit.astype(np.float32), box))
    return records, dropped


def build_collection(
    seq: FrameSequence, policy: KeyframePolicy, patch_size: int, provider
) -> PatchCollection:
    """Keyframes -> per-frame summaries -> one collection, in timestamp order."""
    keyframes = extract_keyframes(seq, policy)
    first = seq.frames[0].pixels
    grid = build_patch_grid(first.shape[0], first.shape[1], patch_size)
    collection = PatchCollection()
    collection.stats.frames = len(seq.frames)
    collection.stats.keyframes = len(keyframes)
    seen = set()
    for frame in keyframes:
        records, dropped = summarize_frame(seq.video_id, frame, grid, provider)
        for rec in records:
            if rec.identity in seen:
                raise DuplicatePatchError(f"duplicate patch identity {rec.identity}")
            seen.add(rec.identity)
        collection.records.extend(records)
        collection.stats.patches += len(records)
        collection.stats.dropped += dropped
        collection.timestamps[(seq.video_id, frame.frame_id)] = frame.timestamp
    return collection


def write_exchange(collection: PatchCollection, path) -> None:
    """Write the embedding-exchange JSONL: one patch record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in collection.records:
            line = {
                "video_id": rec.identity.video_id,
                "frame_id": rec.identity.frame_id,
                "patch_index": rec.identity.patch_index,
                "embedding": [float(x) for x in rec.embedding],
                "box": rec.box.as_list(),
            }
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")


def read_exchange_lines(path):
    """Yield (line_number, record dict) from an exchange JSONL file.

    Raises ValueError naming the offending line on parse or schema problems.
    """
    required = ("video_id", "frame_id", "patch_index", "embedding", "box")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or any(key not in rec for key in required):
                raise ValueError(f"{path}: line {lineno}: missing required fields")
            yield lineno, rec


def collection_from_exchange(path, timestamps: dict | None = None) -> PatchCollection:
    """Load an exchange JSONL directly into a collection, bypassing pixels.

    Embeddings are re-normalized; zero vectors are dropped and counted.  When
    ``timestamps`` is missing, frames get first-seen order as their timestamp.
    """
    collection = PatchCollection()
    seen = set()
    dim = None
    for lineno, rec in read_exchange_lines(path):
        identity = PatchIdentity(
            str(rec["video_id"]), str(rec["frame_id"]), int(rec["patch_index"])
        )
        if identity in seen:
            raise DuplicatePatchError(f"{path}: line {lineno}: duplicate {identity}")
        seen.add(identity)
        emb = np.asarray(rec["embedding"], dtype=np.float32)
        if dim is None:
            dim = emb.shape
        elif emb.shape != dim:
            raise ValueError(
                f"{path}: line {lineno}: embedding dim {emb.shape} != {dim}"
            )
        try:
            unit = normalize(emb)
        except ZeroVectorError:
            collection.stats.dropped += 1
            continue
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        try:
            box = BoundingBox.from_list(rec["box"])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        collection.records.append(PatchRecord(identity, unit.astype(np.float32), box))
        collection.stats.patches += 1
        key = (identity.video_id, identity.frame_id)
        if key not in collection.timestamps:
            if timestamps is not None and key in timestamps:
                collection.timestamps[key] = timestamps[key]
            else:
                collection.timestamps[key] = float(len(collection.timestamps))
    collection.stats.keyframes = len(collection.timestamps)
    collection.stats.frames = collection.stats.keyframes
    return collection
