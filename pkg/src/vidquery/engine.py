"""Two-stage query strategy: embed text, fast-search the index, rerank frames.

Stage 1 retrieves top-k patches through the inverted multi-index and keeps
the best patch per frame.  Stage 2 invokes a pluggable scorer once per
candidate frame (never on frames outside the candidate set) and returns the
top-n frames by rerank score, ties by frame id.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyQueryError, ScorerFailureError
from .index import InvertedMultiIndex
from .model import BoundingBox, PatchRecord, similarity
from .search import ScoredHit, SearchParams, search


@dataclass(frozen=True)
class TextQuery:
    """Free-text query with fast-search breadth k and output frame count n."""

    text: str
    k: int = 50
    n: int = 10

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise EmptyQueryError("query text is empty")
        if self.n < 1 or self.n > self.k:
            raise ValueError(f"need 1 <= n <= k, got n={self.n} k={self.k}")


@dataclass(frozen=True)
class RerankScore:
    """Scorer verdict for one frame: relevance score and localized boxes."""

    frame_id: str
    score: float
    boxes: tuple


@dataclass(frozen=True)
class FrameCandidate:
    """One distinct frame out of fast search, with its best patch hit."""

    video_id: str
    frame_id: str
    best_hit: ScoredHit


@dataclass(frozen=True)
class QueryResult:
    """One output frame with all three score layers for evaluation."""

    rank: int
    video_id: str
    frame_id: str
    boxes: tuple
    rerank_score: float
    approx_score: float
    exact_score: float
    patch_index: int


@dataclass
class PhaseTimings:
    processing: float = 0.0
    fast_search: float = 0.0
    rerank: float = 0.0
    total: float = 0.0


@dataclass
class QueryResponse:
    results: list
    hits: list = field(default_factory=list)
    timings: PhaseTimings = field(default_factory=PhaseTimings)


def embed_text(text: str, provider) -> np.ndarray:
    """Normalized query vector of the collection dimension."""
    if not text or not text.strip():
        raise EmptyQueryError("query text is empty")
    return provider.embed(text)


def fast_search(q: np.ndarray, index: InvertedMultiIndex, k: int, probes: int = 4):
    """Stage 1: top-k patch hits through the inverted multi-index."""
    return search(index, q, SearchParams(probes=probes, k=k))


def frame_candidates(hits) -> list:
    """Deduplicate hits by frame; the best-scoring patch represents the frame."""
    out = []
    seen = set()
    for hit in hits:
        key = (hit.identity.video_id, hit.frame_id)
        if key in seen:
            continue
        seen.add(key)
        out.append(FrameCandidate(video_id=key[0], frame_id=key[1], best_hit=hit))
    return out


def _frame_patches(index: InvertedMultiIndex, cand: FrameCandidate) -> list:
    """All stored patch records of the candidate frame, in handle order."""
    ref = index.frame_ref_of(cand.video_id, cand.frame_id)
    records = []
    for h in index.handles_of_frame(ref):
        records.append(
            PatchRecord(
                identity=index.identity_of(int(h)),
                embedding=index.reconstruct(int(h)),
                box=index.box_of(int(h)),
            )
        )
    return records


def rerank(candidates, index: InvertedMultiIndex, text: str, scorer, n: int):
    """Stage 2: score each candidate frame once, sort by score then frame id.

    Returns at most n (FrameCandidate, RerankScore) pairs; always a subset of
    the candidates.
    """
    scored = []
    for cand in candidates:
        patches = _frame_patches(index, cand)
        try:
            verdict = scorer.score_frame(cand.frame_id, patches, text)
        except ScorerFailureError:
            raise
        except Exception as exc:
            raise ScorerFailureError(f"scorer failed on frame {cand.frame_id!r}: {exc}") from exc
        if not verdict.boxes:
            raise ScorerFailureError(f"scorer returned no boxes for frame {cand.frame_id!r}")
        scored.append((cand, verdict))
    scored.sort(key=lambda pair: (-pair[1].score, pair[1].frame_id, pair[0].video_id))
    return scored[:n]


def query(text_query: TextQuery, index: InvertedMultiIndex, text_provider, scorer, probes: int = 4) -> QueryResponse:
    """embed_text -> fast_search -> rerank, with per-phase wall times."""
    t0 = time.perf_counter()
    q = embed_text(text_query.text, text_provider)
    t1 = time.perf_counter()
    hits = fast_search(q, index, text_query.k, probes=probes)
    t2 = time.perf_counter()
    candidates = frame_candidates(hits)
    ranked = rerank(candidates, index, text_query.text, scorer, text_query.n)
    t3 = time.perf_counter()
    results = []
    for pos, (cand, verdict) in enumerate(ranked, start=1):
        best = cand.best_hit
        results.append(
            QueryResult(
                rank=pos,
                video_id=cand.video_id,
                frame_id=cand.frame_id,
                boxes=tuple(verdict.boxes),
                rerank_score=verdict.score,
                approx_score=best.approx_score,
                exact_score=best.exact_score,
                patch_index=best.identity.patch_index,
            )
        )
    timings = PhaseTimings(
        processing=t1 - t0, fast_search=t2 - t1, rerank=t3 - t2, total=t3 - t0
    )
    return QueryResponse(results=results, hits=hits, timings=timings)


class ReferenceScorer:
    """Exact-similarity rerank: l_s is the best cosine between the query and
    the frame's stored patch embeddings; the box is the best patch's box."""

    concurrent_safe = True

    def __init__(self, text_provider):
        self.text_provider = text_provider
        self._cache = {}

    def score_frame(self, frame_id, patches, text) -> RerankScore:
        q = self._cache.get(text)
        if q is None:
            q = self._cache[text] = embed_text(text, self.text_provider)
        best = None
        best_score = -np.inf
        for rec in patches:
            score = similarity(q, rec.embedding)
            if score > best_score:
                best_score = score
                best = rec
        if best is None:
            raise ScorerFailureError(f"frame {frame_id!r} has no patches to score")
        return RerankScore(frame_id=frame_id, score=float(best_score), boxes=(best.box,))


class ConstantScorer:
    """Flat scores: rerank order degenerates to the frame-id tie-break."""

    concurrent_safe = True

    def __init__(self, value: float = 0.0):
        self.value = value

    def score_frame(self, frame_id, patches, text) -> RerankScore:
        if not patches:
            raise ScorerFailureError(f"frame {frame_id!r} has no patches to score")
        return RerankScore(frame_id=frame_id, score=self.value, boxes=(patches[0].box,))


class ExternalScorer:
    """Out-of-process scorer speaking line-delimited JSON on stdin/stdout.

    Request: {"frame_id", "text", "patches": [{"embedding", "box"}, ...]}
    Response: {"l_s": float, "boxes": [[x_min, y_min, x_max, y_max], ...]}
    """

    concurrent_safe = False

    def __init__(self, command):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                args,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerFailureError(f"cannot start scorer {args!r}: {exc}") from exc

    def score_frame(self, frame_id, patches, text) -> RerankScore:
        request = {
            "frame_id": frame_id,
            "text": text,
            "patches": [
                {"embedding": [float(x) for x in rec.embedding], "box": rec.box.as_list()}
                for rec in patches
            ],
        }
        try:
            self._proc.stdin.write(json.dumps(request, separators=(",", ":")) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise ScorerFailureError(f"scorer pipe failed on frame {frame_id!r}: {exc}") from exc
        if not line:
            raise ScorerFailureError(
                f"scorer exited (code {self._proc.poll()}) before answering frame {frame_id!r}"
            )
        try:
            response = json.loads(line)
            score = float(response["l_s"])
            if not np.isfinite(score):
                raise ValueError(f"non-finite l_s {score}")
            boxes = tuple(BoundingBox.from_list(b) for b in response["boxes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerFailureError(f"bad scorer response for frame {frame_id!r}: {exc}") from exc
        return RerankScore(frame_id=frame_id, score=score, boxes=boxes)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
