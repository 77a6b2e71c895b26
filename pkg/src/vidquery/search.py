"""Approximate nearest-neighbor search over the inverted multi-index.

Default path: the candidate set is the union of every patch reached through a
selected cluster in any subspace; each candidate is scored over all subspaces
from its stored code and residual, the best k by approximate score are
rescored exactly from their reconstructed vectors, and ties everywhere break
by smallest handle.  A literal per-subspace fragment path with majority-vote
patch resolution is kept callable for comparison.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels, pq
from .errors import DimensionMismatchError, EmptyIndexError
from .index import InvertedMultiIndex
from .model import BoundingBox, PatchIdentity


@dataclass(frozen=True)
class SearchParams:
    """probes = clusters scanned per subspace (A); k = neighbors requested."""

    probes: int = 4
    k: int = 10

    def __post_init__(self):
        if self.probes < 1:
            raise ValueError("probes must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ScoredHit:
    """One search result: handle, both score layers, and resolved metadata."""

    patch_ref: int
    approx_score: float
    exact_score: float
    identity: PatchIdentity
    box: BoundingBox
    frame_id: str


def select_clusters(lut: np.ndarray, probes: int) -> np.ndarray:
    """Top-``probes`` centroid indices per subspace, best first, ties by index."""
    if probes > lut.shape[1]:
        raise ValueError(f"probes {probes} > {lut.shape[1]} clusters")
    order = np.argsort(-lut, axis=1, kind="stable")
    return order[:, :probes].astype(np.int64)


def _check_query(index: InvertedMultiIndex, q: np.ndarray) -> np.ndarray:
    if index.size == 0:
        raise EmptyIndexError("search against an empty index")
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.config.dim,):
        raise DimensionMismatchError(
            f"query dim {q.shape} != index dim ({index.config.dim},)"
        )
    return q


def _hit(index: InvertedMultiIndex, handle: int, approx: float, exact: float) -> ScoredHit:
    return ScoredHit(
        patch_ref=handle,
        approx_score=approx,
        exact_score=exact,
        identity=index.identity_of(handle),
        box=index.box_of(handle),
        frame_id=index.frame_id_of(handle),
    )


def exact_rescore(index: InvertedMultiIndex, handles, q64: np.ndarray) -> np.ndarray:
    """Full-precision dot product against each handle's reconstructed vector."""
    out = np.empty(len(handles), dtype=np.float64)
    for i, h in enumerate(handles):
        recon = pq.reconstruct(
            index.codes[h],
            index.residuals[h].reshape(index.config.subspaces, index.config.sub_dim),
            index.codebooks,
        )
        out[i] = np.dot(recon.astype(np.float64), q64)
    return out


def search(index: InvertedMultiIndex, q: np.ndarray, params: SearchParams):
    """Top-k patches for a normalized query vector, best exact score first."""
    q64 = _check_query(index, q)
    probes = params.probes
    if probes > index.config.centroids:
        raise ValueError(
            f"probes {probes} > {index.config.centroids} clusters per subspace"
        )
    lut = pq.build_lookup_table(q64, index.codebooks)
    selected = select_clusters(lut, probes)
    member_lists = [
        index.postings[p][m]
        for p in range(index.config.subspaces)
        for m in selected[p]
    ]
    cand = np.unique(np.concatenate(member_lists))
    approx = kernels.approx_scores(cand, index.codes, index.residuals, lut, q64)
    order = np.lexsort((cand, -approx))[: params.k]
    kept = cand[order]
    kept_approx = approx[order]
    exact = exact_rescore(index, kept, q64)
    final = np.lexsort((kept, -exact))
    return [
        _hit(index, int(kept[i]), float(kept_approx[i]), float(exact[i])) for i in final
    ]


def resolve_patch_id(component_ids) -> int:
    """Most frequent handle among a candidate's components, ties by smallest."""
    if not component_ids:
        raise ValueError("component id list is empty")
    counts = Counter(int(h) for h in component_ids)
    return min(counts, key=lambda h: (-counts[h], h))


def search_fragments(index: InvertedMultiIndex, q: np.ndarray, params: SearchParams):
    """Literal fragment reading: subspace hits scored independently, then
    rank-aligned into candidates whose patch id is majority-voted.

    Not the default path; kept callable so the vote rule stays comparable
    against the union-based search.
    """
    q64 = _check_query(index, q)
    cfg = index.config
    if params.probes > cfg.centroids:
        raise ValueError(f"probes {params.probes} > {cfg.centroids} clusters")
    lut = pq.build_lookup_table(q64, index.codebooks)
    selected = select_clusters(lut, params.probes)
    ranked_fragments = []
    for p in range(cfg.subspaces):
        handles = np.concatenate([index.postings[p][m] for m in selected[p]])
        lo = p * cfg.sub_dim
        hi = lo + cfg.sub_dim
        scores = lut[p, index.codes[handles, p].astype(np.int64)] + (
            index.residuals[handles, lo:hi].astype(np.float64) @ q64[lo:hi]
        )
        order = np.lexsort((handles, -scores))
        ranked_fragments.append((handles[order], scores[order]))

    depth = min(params.k, max(len(h) for h, _ in ranked_fragments))
    hits = []
    for rank in range(depth):
        components = []
        approx = 0.0
        exact = 0.0
        for p, (handles, scores) in enumerate(ranked_fragments):
            if rank >= len(handles):
                continue
            h = int(handles[rank])
            components.append(h)
            approx += float(scores[rank])
            lo = p * cfg.sub_dim
            hi = lo + cfg.sub_dim
            part = pq.reconstruct(
                index.codes[h], index.residuals[h].reshape(cfg.subspaces, cfg.sub_dim), index.codebooks
            )[lo:hi]
            exact += float(np.dot(part.astype(np.float64), q64[lo:hi]))
        winner = resolve_patch_id(components)
        hits.append(_hit(index, winner, approx, exact))
    hits.sort(key=lambda hit: (-hit.exact_score, hit.patch_ref))
    return hits
