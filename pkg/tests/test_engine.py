"""Two-stage query strategy: embedding, dedup, rerank, scorers, end to end."""

import shlex
import sys
from pathlib import Path

import numpy as np
import pytest

from vidquery import engine, index as index_mod
from vidquery.engine import (
    ConstantScorer,
    ExternalScorer,
    ReferenceScorer,
    TextQuery,
    embed_text,
    fast_search,
    frame_candidates,
    query,
    rerank,
)
from vidquery.errors import EmptyIndexError, EmptyQueryError, ScorerFailureError
from vidquery.model import similarity
from vidquery.pq import PQConfig
from vidquery.providers import SyntheticProvider, SyntheticTextProvider
from vidquery.summary import KeyframePolicy, build_collection
from vidquery.synthetic import (
    collection_from_vectors,
    planted_sequence,
    random_unit_vectors,
)

STUB = f"{shlex.quote(sys.executable)} {shlex.quote(str(Path(__file__).parent / 'external_scorer_stub.py'))}"


@pytest.fixture(scope="module")
def planted():
    """Small planted corpus: 60 frames, class 3 planted in one of them."""
    seq, planted_frame = planted_sequence(
        seed=101, num_frames=60, rows=2, cols=2, patch_size=16, planted_label=3
    )
    provider = SyntheticProvider(seed=101, dim=64)
    collection = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, provider)
    cfg = PQConfig(dim=64, subspaces=8, centroids=16, train_iters=20, seed=101)
    idx = index_mod.build(collection, cfg)
    return idx, collection, planted_frame


class TestEmbedText:
    def test_deterministic(self):
        provider = SyntheticTextProvider(seed=3, dim=64)
        np.testing.assert_array_equal(
            embed_text("a red car", provider), embed_text("a red car", provider)
        )

    def test_class_token_near_class_centroid(self, planted):
        idx, collection, planted_frame = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        q = embed_text("class:3", provider)
        class3 = [
            r.embedding
            for r in collection.records
            if r.identity.frame_id == planted_frame
        ]
        centroid = np.mean(np.stack(class3), axis=0)
        centroid /= np.linalg.norm(centroid)
        assert float(np.dot(q, centroid)) >= 0.95

    def test_empty_text_rejected(self):
        provider = SyntheticTextProvider(seed=3, dim=64)
        with pytest.raises(EmptyQueryError):
            embed_text("", provider)
        with pytest.raises(EmptyQueryError):
            embed_text("   ", provider)

    def test_normalized_output(self):
        provider = SyntheticTextProvider(seed=3, dim=64)
        q = embed_text("anything at all", provider)
        assert abs(np.linalg.norm(q) - 1.0) <= 1e-9


class TestFastSearchAndDedup:
    def test_single_patch_corpus(self):
        vectors = random_unit_vectors(1, 64, seed=7)
        idx = index_mod.build(
            collection_from_vectors(vectors),
            PQConfig(dim=64, subspaces=8, centroids=1, train_iters=3, seed=0),
        )
        hits = fast_search(vectors[0].astype(np.float64), idx, k=1, probes=1)
        assert len(hits) == 1

    def test_k_beyond_corpus_returns_everything(self):
        vectors = random_unit_vectors(30, 64, seed=9)
        idx = index_mod.build(
            collection_from_vectors(vectors, 4),
            PQConfig(dim=64, subspaces=8, centroids=8, train_iters=10, seed=0),
        )
        q = random_unit_vectors(1, 64, seed=11)[0].astype(np.float64)
        hits = fast_search(q, idx, k=1000, probes=8)
        assert len(hits) == 30

    def test_dedup_keeps_best_patch_per_frame(self):
        vectors = random_unit_vectors(40, 64, seed=13)
        idx = index_mod.build(
            collection_from_vectors(vectors, 4),
            PQConfig(dim=64, subspaces=8, centroids=8, train_iters=10, seed=0),
        )
        q = random_unit_vectors(1, 64, seed=15)[0].astype(np.float64)
        hits = fast_search(q, idx, k=40, probes=8)
        candidates = frame_candidates(hits)
        seen = [c.frame_id for c in candidates]
        assert len(seen) == len(set(seen))
        for cand in candidates:
            frame_hits = [h for h in hits if h.frame_id == cand.frame_id]
            best = max(frame_hits, key=lambda h: h.exact_score)
            assert cand.best_hit.exact_score == best.exact_score


class _CountingScorer(ConstantScorer):
    def __init__(self):
        super().__init__()
        self.calls = 0

    def score_frame(self, frame_id, patches, text):
        self.calls += 1
        return super().score_frame(frame_id, patches, text)


class TestRerank:
    def test_reference_scorer_matches_direct_scan(self, planted):
        idx, collection, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        q = embed_text("class:3", provider)
        hits = fast_search(q, idx, k=50, probes=16)
        candidates = frame_candidates(hits)
        ranked = rerank(candidates, idx, "class:3", ReferenceScorer(provider), len(candidates))
        # oracle: max cosine over each candidate frame's stored patches
        for cand, verdict in ranked:
            frame_embs = [
                r.embedding
                for r in collection.records
                if r.identity.frame_id == cand.frame_id
            ]
            best = max(similarity(q, e) for e in frame_embs)
            assert verdict.score == pytest.approx(best, abs=1e-6)
        scores = [v.score for _, v in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_constant_scorer_orders_by_frame_id(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        q = embed_text("class:0", provider)
        hits = fast_search(q, idx, k=20, probes=16)
        candidates = frame_candidates(hits)
        ranked = rerank(candidates, idx, "class:0", ConstantScorer(), 5)
        frame_ids = [v.frame_id for _, v in ranked]
        assert frame_ids == sorted(frame_ids)

    def test_subset_property(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        response = query(TextQuery("class:3", k=30, n=10), idx, provider, ConstantScorer(), probes=8)
        candidate_frames = {(c.video_id, c.frame_id) for c in frame_candidates(response.hits)}
        assert {(r.video_id, r.frame_id) for r in response.results} <= candidate_frames

    def test_scorer_called_once_per_frame(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        scorer = _CountingScorer()
        response = query(TextQuery("class:3", k=30, n=5), idx, provider, scorer, probes=8)
        distinct = len(frame_candidates(response.hits))
        assert scorer.calls == distinct <= 30

    def test_n_of_one(self, planted):
        idx, _, planted_frame = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        response = query(
            TextQuery("class:3", k=20, n=1), idx, provider, ReferenceScorer(provider), probes=16
        )
        assert len(response.results) == 1
        assert response.results[0].frame_id == planted_frame

    def test_scorer_failure_carries_frame_context(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)

        class Exploding:
            def score_frame(self, frame_id, patches, text):
                raise RuntimeError("boom")

        with pytest.raises(ScorerFailureError, match="frame"):
            query(TextQuery("class:3", k=10, n=1), idx, provider, Exploding(), probes=8)


class TestQueryEndToEnd:
    def test_planted_frame_rank_one(self, planted):
        idx, _, planted_frame = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        response = query(
            TextQuery("class:3", k=50, n=10), idx, provider, ReferenceScorer(provider), probes=4
        )
        assert response.results[0].frame_id == planted_frame
        assert response.results[0].rank == 1

    def test_n_beyond_candidates_returns_fewer(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        response = query(
            TextQuery("class:3", k=8, n=8), idx, provider, ReferenceScorer(provider), probes=4
        )
        assert len(response.results) <= 8

    def test_empty_index_raises(self):
        idx = index_mod.InvertedMultiIndex(
            config=PQConfig(dim=8, subspaces=2, centroids=1),
            codebooks=np.zeros((2, 1, 4), dtype=np.float32),
            codes=np.zeros((0, 2), dtype=np.uint16),
            residuals=np.zeros((0, 8)),
            boxes=np.zeros((0, 4), dtype=np.float32),
            frame_refs=np.zeros(0, dtype=np.int64),
            postings=[[np.zeros(0, dtype=np.int64)] for _ in range(2)],
            patch_table=[],
            frame_table=[],
        )
        provider = SyntheticTextProvider(seed=1, dim=8)
        with pytest.raises(EmptyIndexError):
            query(TextQuery("class:1", k=5, n=1), idx, provider, ConstantScorer(), probes=1)

    def test_deterministic_responses(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        a = query(TextQuery("class:3", k=20, n=5), idx, provider, ReferenceScorer(provider), probes=4)
        b = query(TextQuery("class:3", k=20, n=5), idx, provider, ReferenceScorer(provider), probes=4)
        assert a.results == b.results
        assert a.hits == b.hits

    def test_full_breadth_matches_global_frame_ranking(self, planted):
        idx, collection, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        q = embed_text("class:3", provider)
        n_frames = len({r.identity.frame_id for r in collection.records})
        response = query(
            TextQuery("class:3", k=len(collection.records), n=n_frames),
            idx,
            provider,
            ReferenceScorer(provider),
            probes=idx.config.centroids,
        )
        # oracle: frames ranked by their best exact cosine, ties by frame id
        by_frame = {}
        for rec in collection.records:
            s = similarity(q, rec.embedding)
            frame = rec.identity.frame_id
            by_frame[frame] = max(by_frame.get(frame, -np.inf), s)
        expected = sorted(by_frame, key=lambda f: (-by_frame[f], f))
        assert [r.frame_id for r in response.results] == expected

    def test_invalid_text_query(self):
        with pytest.raises(EmptyQueryError):
            TextQuery("", k=5, n=1)
        with pytest.raises(ValueError):
            TextQuery("x", k=5, n=6)


class TestMultiVideo:
    def test_colliding_frame_ids_stay_separate(self):
        # two videos reuse the frame id; dedup and resolution must not merge them
        rng = np.random.default_rng(61)
        records_a = collection_from_vectors(random_unit_vectors(40, 64, seed=63), 4, "cam-a")
        records_b = collection_from_vectors(random_unit_vectors(40, 64, seed=64), 4, "cam-b")
        merged = records_a
        merged.records.extend(records_b.records)
        merged.timestamps.update(records_b.timestamps)
        idx = index_mod.build(
            merged, PQConfig(dim=64, subspaces=8, centroids=16, train_iters=10, seed=1)
        )
        q = rng.standard_normal(64)
        q /= np.linalg.norm(q)
        hits = fast_search(q, idx, k=80, probes=16)
        candidates = frame_candidates(hits)
        keys = [(c.video_id, c.frame_id) for c in candidates]
        assert len(keys) == len(set(keys))
        videos = {c.video_id for c in candidates}
        assert videos == {"cam-a", "cam-b"}
        for cand in candidates:
            assert cand.best_hit.identity.video_id == cand.video_id


class TestExternalScorer:
    def test_round_trip(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        with ExternalScorer(STUB) as scorer:
            response = query(TextQuery("class:3", k=20, n=5), idx, provider, scorer, probes=8)
        assert response.results
        for result in response.results:
            assert result.boxes

    def test_matches_in_process_equivalent(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        q = embed_text("class:3", provider)
        hits = fast_search(q, idx, k=20, probes=8)
        candidates = frame_candidates(hits)
        with ExternalScorer(STUB) as scorer:
            external = rerank(candidates, idx, "class:3", scorer, 5)

        class FirstCoord:
            def score_frame(self, frame_id, patches, text):
                best = max(patches, key=lambda r: float(r.embedding[0]))
                return engine.RerankScore(frame_id, float(best.embedding[0]), (best.box,))

        local = rerank(candidates, idx, "class:3", FirstCoord(), 5)
        assert [v.frame_id for _, v in external] == [v.frame_id for _, v in local]
        for (_, ve), (_, vl) in zip(external, local):
            assert ve.score == pytest.approx(vl.score, abs=1e-6)

    def test_dead_scorer_raises(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        scorer = ExternalScorer(f"{shlex.quote(sys.executable)} -c 'import sys; sys.exit(0)'")
        with pytest.raises(ScorerFailureError):
            query(TextQuery("class:3", k=5, n=1), idx, provider, scorer, probes=4)
        scorer.close()

    def test_bad_response_raises(self, planted):
        idx, _, _ = planted
        provider = SyntheticTextProvider(seed=101, dim=64)
        cmd = f"{shlex.quote(sys.executable)} -c 'print(\"not json\"); import sys; sys.stdout.flush(); sys.stdin.read()'"
        scorer = ExternalScorer(cmd)
        with pytest.raises(ScorerFailureError):
            query(TextQuery("class:3", k=5, n=1), idx, provider, scorer, probes=4)
        scorer.close()
