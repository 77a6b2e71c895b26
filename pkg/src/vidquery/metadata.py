"""Relational-style side store resolving patch identities to frame metadata.

Backed by a JSONL file mirroring the embedding-exchange schema minus the
embedding, plus the frame timestamp; rebuilt into memory on load.  Single
writer during ingestion, lock-free concurrent reads afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DuplicateKeyError, NotFoundError
from .model import BoundingBox, PatchIdentity


@dataclass(frozen=True)
class PatchMeta:
    """Metadata of one patch, keyed uniquely by its identity."""

    identity: PatchIdentity
    box: BoundingBox
    timestamp: float
    video_id: str


class MetadataStore:
    """In-memory map of PatchIdentity -> PatchMeta with a video->frames view."""

    def __init__(self):
        self._by_identity: dict[PatchIdentity, PatchMeta] = {}

    def __len__(self) -> int:
        return len(self._by_identity)

    def put(self, meta: PatchMeta) -> None:
        if meta.identity in self._by_identity:
            raise DuplicateKeyError(f"metadata already stored for {meta.identity}")
        self._by_identity[meta.identity] = meta

    def get(self, identity: PatchIdentity) -> PatchMeta:
        meta = self._by_identity.get(identity)
        if meta is None:
            raise NotFoundError(f"no metadata for {identity}")
        return meta

    def frames_of(self, video_id: str) -> list[str]:
        """Unique frame ids of a video in (timestamp, frame_id) order."""
        seen = {}
        for meta in self._by_identity.values():
            if meta.video_id == video_id and meta.identity.frame_id not in seen:
                seen[meta.identity.frame_id] = meta.timestamp
        return sorted(seen, key=lambda fid: (seen[fid], fid))

    def identities(self):
        return self._by_identity.keys()

    def save(self, path) -> None:
        """Append-only JSONL snapshot, written in insertion order."""
        with open(path, "w", encoding="utf-8") as fh:
            for meta in self._by_identity.values():
                line = {
                    "video_id": meta.identity.video_id,
                    "frame_id": meta.identity.frame_id,
                    "patch_index": meta.identity.patch_index,
                    "box": meta.box.as_list(),
                    "timestamp": meta.timestamp,
                }
                fh.write(json.dumps(line, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "MetadataStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
                identity = PatchIdentity(
                    str(rec["video_id"]), str(rec["frame_id"]), int(rec["patch_index"])
                )
                store.put(
                    PatchMeta(
                        identity=identity,
                        box=BoundingBox.from_list(rec["box"]),
                        timestamp=float(rec.get("timestamp", 0.0)),
                        video_id=identity.video_id,
                    )
                )
        return store


def store_from_collection(collection) -> MetadataStore:
    """Metadata store for every record of a collection."""
    store = MetadataStore()
    for rec in collection.records:
        key = (rec.identity.video_id, rec.identity.frame_id)
        store.put(
            PatchMeta(
                identity=rec.identity,
                box=rec.box,
                timestamp=float(collection.timestamps.get(key, 0.0)),
                video_id=rec.identity.video_id,
            )
        )
    return store


def verify_referential_integrity(index, store: MetadataStore) -> None:
    """Every handle in the index must resolve to a stored metadata record."""
    for identity in index.patch_table:
        store.get(identity)
