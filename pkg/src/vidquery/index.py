"""The persistent inverted multi-index.

Per subspace, every ingested patch lands in exactly one cluster's posting
list, so per-subspace posting totals all equal the patch count.  Patch data
is held column-wise (codes, residuals, boxes, frame refs) keyed by a dense
handle assigned in ingestion order; posting lists hold handles.

Reads are lock-free over a built index; build and insert require an
exclusive writer (insert stages every new array before touching the index).

File format (little-endian): magic ``VIDQIDX1``, u32 version, config, the
codebooks as raw float32, per-(subspace, cluster) posting counts and packed
postings, the frame and patch tables, and a trailing 64-bit checksum over
all preceding bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import pq
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DimensionMismatchError,
    DuplicatePatchError,
    IndexIOError,
    InsufficientTrainingDataError,
    VersionMismatchError,
)
from .model import BoundingBox, PatchIdentity, PatchRecord
from .pq import PQConfig
from .summary import PatchCollection

MAGIC = b"VIDQIDX1"
FORMAT_VERSION = 1


def _posting_dtype(sub_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("patch_ref", "<u8"),
            ("frame_ref", "<u8"),
            ("residual", "<f8", (sub_dim,)),
            ("box", "<f4", (4,)),
        ]
    )


@dataclass
class InvertedMultiIndex:
    """Cluster-ID -> postings, per subspace, over one trained codebook set."""

    config: PQConfig
    codebooks: np.ndarray
    codes: np.ndarray
    residuals: np.ndarray
    boxes: np.ndarray
    frame_refs: np.ndarray
    postings: list
    patch_table: list
    frame_table: list
    _handle_of: dict = field(default_factory=dict, repr=False)
    _frame_ref_of: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._handle_of:
            self._handle_of = {ident: h for h, ident in enumerate(self.patch_table)}
        if not self._frame_ref_of:
            self._frame_ref_of = {key: r for r, key in enumerate(self.frame_table)}

    @property
    def size(self) -> int:
        return len(self.patch_table)

    def identity_of(self, handle: int) -> PatchIdentity:
        return self.patch_table[handle]

    def frame_id_of(self, handle: int) -> str:
        return self.frame_table[int(self.frame_refs[handle])][1]

    def box_of(self, handle: int) -> BoundingBox:
        return BoundingBox.from_list(self.boxes[handle].tolist())

    def reconstruct(self, handle: int) -> np.ndarray:
        """Stored vector rebuilt from centroids + residuals (exact by design)."""
        return pq.reconstruct(self.codes[handle], split_row(self, handle), self.codebooks)

    def handles_of_frame(self, frame_ref: int) -> np.ndarray:
        return np.flatnonzero(self.frame_refs == frame_ref)

    def frame_ref_of(self, video_id: str, frame_id: str) -> int:
        return self._frame_ref_of[(video_id, frame_id)]

    def validate(self) -> None:
        """Assert the structural invariant: posting totals equal patch count."""
        for p, clusters in enumerate(self.postings):
            total = sum(len(handles) for handles in clusters)
            if total != self.size:
                raise AssertionError(
                    f"subspace {p} holds {total} postings for {self.size} patches"
                )


def split_row(index: InvertedMultiIndex, handle: int) -> np.ndarray:
    return index.residuals[handle].reshape(index.config.subspaces, index.config.sub_dim)


def _postings_from_codes(codes: np.ndarray, config: PQConfig) -> list:
    postings = []
    for p in range(config.subspaces):
        postings.append(
            [
                np.flatnonzero(codes[:, p] == m).astype(np.int64)
                for m in range(config.centroids)
            ]
        )
    return postings


def build(collection: PatchCollection, config: PQConfig) -> InvertedMultiIndex:
    """Train codebooks on the collection and post every record, deterministically."""
    records = collection.records
    if len(records) < config.centroids:
        raise InsufficientTrainingDataError(
            f"{len(records)} patches < {config.centroids} centroids"
        )
    x = collection.embedding_matrix()
    if x.shape[1] != config.dim:
        raise DimensionMismatchError(f"collection dim {x.shape[1]} != config {config.dim}")
    codebooks = pq.train_codebooks(x, config)
    codes = pq.encode(x, codebooks)
    residuals = pq.reconstructing_residuals_batch(x, codes, codebooks)

    frame_table = []
    frame_ref_of = {}
    frame_refs = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        key = (rec.identity.video_id, rec.identity.frame_id)
        ref = frame_ref_of.get(key)
        if ref is None:
            ref = frame_ref_of[key] = len(frame_table)
            frame_table.append(key)
        frame_refs[i] = ref

    index = InvertedMultiIndex(
        config=config,
        codebooks=codebooks,
        codes=codes,
        residuals=residuals,
        boxes=np.array([r.box.as_list() for r in records], dtype=np.float32),
        frame_refs=frame_refs,
        postings=_postings_from_codes(codes, config),
        patch_table=[r.identity for r in records],
        frame_table=frame_table,
        _frame_ref_of=frame_ref_of,
    )
    if len(index._handle_of) != index.size:
        raise DuplicatePatchError("collection contains duplicate patch identities")
    return index


def insert(index: InvertedMultiIndex, record: PatchRecord) -> InvertedMultiIndex:
    """Encode one record with the existing codebooks and append it.

    Codebooks are never retrained here; use a rebuild for codebook drift.
    The record is searchable as soon as this returns.
    """
    if record.embedding.shape != (index.config.dim,):
        raise DimensionMismatchError(
            f"record dim {record.embedding.shape} != index dim {index.config.dim}"
        )
    if record.identity in index._handle_of:
        raise DuplicatePatchError(f"patch identity already indexed: {record.identity}")
    handle = index.size
    code = pq.encode(record.embedding, index.codebooks)
    res = pq.reconstructing_residual(record.embedding, code, index.codebooks).reshape(1, -1)

    key = (record.identity.video_id, record.identity.frame_id)
    new_frame = key not in index._frame_ref_of
    ref = len(index.frame_table) if new_frame else index._frame_ref_of[key]

    # stage every new array, then apply; the record is searchable on return
    codes = np.concatenate([index.codes, code[None, :]])
    residuals = np.concatenate([index.residuals, res])
    boxes = np.concatenate(
        [index.boxes, np.array([record.box.as_list()], dtype=np.float32)]
    )
    frame_refs = np.concatenate([index.frame_refs, [ref]])
    grown = {
        p: np.append(index.postings[p][int(code[p])], np.int64(handle))
        for p in range(index.config.subspaces)
    }

    if new_frame:
        index._frame_ref_of[key] = ref
        index.frame_table.append(key)
    index.codes = codes
    index.residuals = residuals
    index.boxes = boxes
    index.frame_refs = frame_refs
    for p, handles in grown.items():
        index.postings[p][int(code[p])] = handles
    index.patch_table.append(record.identity)
    index._handle_of[record.identity] = handle
    return index


def _pack_str(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def to_bytes(index: InvertedMultiIndex) -> bytes:
    cfg = index.config
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<IIIIq", cfg.dim, cfg.subspaces, cfg.centroids, cfg.train_iters, cfg.seed)
    out += np.ascontiguousarray(index.codebooks, dtype="<f4").tobytes()
    dtype = _posting_dtype(cfg.sub_dim)
    for p in range(cfg.subspaces):
        lo = p * cfg.sub_dim
        hi = lo + cfg.sub_dim
        for m in range(cfg.centroids):
            handles = index.postings[p][m]
            out += struct.pack("<Q", len(handles))
            packed = np.empty(len(handles), dtype=dtype)
            packed["patch_ref"] = handles
            packed["frame_ref"] = index.frame_refs[handles]
            packed["residual"] = index.residuals[handles, lo:hi]
            packed["box"] = index.boxes[handles]
            out += packed.tobytes()
    out += struct.pack("<Q", len(index.frame_table))
    for video_id, frame_id in index.frame_table:
        _pack_str(out, video_id)
        _pack_str(out, frame_id)
    out += struct.pack("<Q", len(index.patch_table))
    for ident in index.patch_table:
        _pack_str(out, ident.video_id)
        _pack_str(out, ident.frame_id)
        out += struct.pack("<I", ident.patch_index)
    out += hashlib.blake2b(bytes(out), digest_size=8).digest()
    return bytes(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        values = struct.unpack_from("<" + fmt, self.buf, self.pos)
        self.pos += struct.calcsize("<" + fmt)
        return values

    def take_bytes(self, n: int) -> bytes:
        chunk = self.buf[self.pos : self.pos + n]
        if len(chunk) != n:
            raise IndexIOError("index file ends prematurely")
        self.pos += n
        return chunk

    def take_str(self) -> str:
        (n,) = self.take("I")
        return self.take_bytes(n).decode("utf-8")


def from_bytes(buf: bytes) -> InvertedMultiIndex:
    if len(buf) < len(MAGIC) + 8 or buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not an index file (bad magic bytes)")
    payload, stored = buf[:-8], buf[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != stored:
        raise ChecksumMismatchError("index file checksum mismatch (corrupt or truncated)")
    cur = _Cursor(payload)
    cur.take_bytes(len(MAGIC))
    (version,) = cur.take("I")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"index format version {version} != {FORMAT_VERSION}")
    dim, subspaces, centroids, train_iters, seed = cur.take("IIIIq")
    config = PQConfig(
        dim=dim, subspaces=subspaces, centroids=centroids, train_iters=train_iters, seed=seed
    )
    cb_bytes = cur.take_bytes(subspaces * centroids * config.sub_dim * 4)
    codebooks = np.frombuffer(cb_bytes, dtype="<f4").reshape(
        subspaces, centroids, config.sub_dim
    ).copy()

    dtype = _posting_dtype(config.sub_dim)
    raw_postings = []
    total_first = None
    for p in range(subspaces):
        clusters = []
        for m in range(centroids):
            (count,) = cur.take("Q")
            packed = np.frombuffer(cur.take_bytes(count * dtype.itemsize), dtype=dtype)
            clusters.append(packed)
        raw_postings.append(clusters)
        total = sum(len(c) for c in clusters)
        if total_first is None:
            total_first = total
        elif total != total_first:
            raise IndexIOError("per-subspace posting totals disagree")

    (n_frames,) = cur.take("Q")
    frame_table = [(cur.take_str(), cur.take_str()) for _ in range(n_frames)]
    (n_patches,) = cur.take("Q")
    patch_table = []
    for _ in range(n_patches):
        video_id = cur.take_str()
        frame_id = cur.take_str()
        (patch_index,) = cur.take("I")
        patch_table.append(PatchIdentity(video_id, frame_id, patch_index))
    if total_first != n_patches:
        raise IndexIOError("posting totals disagree with the patch table")
    if len(set(patch_table)) != n_patches:
        raise IndexIOError("patch table contains duplicate identities")

    codes = np.empty((n_patches, subspaces), dtype=pq.CODE_DTYPE)
    residuals = np.empty((n_patches, dim), dtype=np.float64)
    boxes = np.empty((n_patches, 4), dtype=np.float32)
    frame_refs = np.empty(n_patches, dtype=np.int64)
    postings = []
    for p, clusters in enumerate(raw_postings):
        lo = p * config.sub_dim
        hi = lo + config.sub_dim
        handle_lists = []
        for m, packed in enumerate(clusters):
            handles = packed["patch_ref"].astype(np.int64)
            if handles.size and handles.max() >= n_patches:
                raise IndexIOError("posting handle out of range")
            codes[handles, p] = m
            residuals[handles, lo:hi] = packed["residual"]
            if p == 0:
                boxes[handles] = packed["box"]
                frame_refs[handles] = packed["frame_ref"].astype(np.int64)
            handle_lists.append(handles)
        postings.append(handle_lists)
    if frame_refs.size and frame_refs.max(initial=-1) >= len(frame_table):
        raise IndexIOError("frame reference out of range")

    return InvertedMultiIndex(
        config=config,
        codebooks=codebooks,
        codes=codes,
        residuals=residuals,
        boxes=boxes,
        frame_refs=frame_refs,
        postings=postings,
        patch_table=patch_table,
        frame_table=frame_table,
    )


def persist(index: InvertedMultiIndex, path) -> None:
    """Write the index file; the metadata JSONL lives next to it."""
    try:
        with open(path, "wb") as fh:
            fh.write(to_bytes(index))
    except OSError as exc:
        raise IndexIOError(f"cannot write index file {path}: {exc}") from exc


def load(path) -> InvertedMultiIndex:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IndexIOError(f"cannot read index file {path}: {exc}") from exc
    return from_bytes(buf)
