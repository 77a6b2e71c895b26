"""Desk-scale benchmark suites, emitted as CSV.

scaling: index size vs fast-search latency              (size sweep)
rerank:  candidate frame count vs rerank latency        (object sweep)
recall:  probe count vs mean recall@k against brute force
kernels: numba-compiled vs pure-numpy hot kernels
"""

from __future__ import annotations

import csv
import statistics
import time

import numpy as np

from . import evaluation, index as index_mod, kernels, pq, search
from .engine import ReferenceScorer, TextQuery, query
from .providers import SyntheticTextProvider
from .synthetic import collection_from_vectors, random_unit_vectors


def _median_search_time(idx, queries, params: search.SearchParams) -> float:
    times = []
    for q in queries:
        t0 = time.perf_counter()
        search.search(idx, q, params)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_scaling(cfg, sizes, num_queries: int = 50):
    """Fast-search latency as corpus size grows, at fixed probes/centroids."""
    rows = []
    queries = random_unit_vectors(num_queries, cfg.dim, seed=cfg.seed + 101).astype(np.float64)
    params = search.SearchParams(probes=cfg.probes, k=cfg.n)
    for size in sizes:
        vectors = random_unit_vectors(size, cfg.dim, seed=cfg.seed)
        pq_config = pq.PQConfig(
            dim=cfg.dim,
            subspaces=cfg.subspaces,
            centroids=cfg.centroids,
            train_iters=cfg.train_iters,
            seed=cfg.seed,
        )
        t0 = time.perf_counter()
        idx = index_mod.build(collection_from_vectors(vectors), pq_config)
        build_s = time.perf_counter() - t0
        _median_search_time(idx, queries[:5], params)  # warm the kernels
        median = _median_search_time(idx, queries, params)
        rows.append(
            {
                "size": size,
                "build_seconds": f"{build_s:.6f}",
                "median_search_seconds": f"{median:.9f}",
            }
        )
    return ["size", "build_seconds", "median_search_seconds"], rows


def bench_rerank(cfg, frame_counts, num_queries: int = 20):
    """Rerank latency as the number of candidate frames grows."""
    patches_per_frame = 4
    total = max(frame_counts) * patches_per_frame * 4
    vectors = random_unit_vectors(total, cfg.dim, seed=cfg.seed)
    pq_config = pq.PQConfig(
        dim=cfg.dim, subspaces=cfg.subspaces, centroids=cfg.centroids,
        train_iters=cfg.train_iters, seed=cfg.seed,
    )
    idx = index_mod.build(collection_from_vectors(vectors, patches_per_frame), pq_config)
    provider = SyntheticTextProvider(seed=cfg.seed, dim=cfg.dim)
    scorer = ReferenceScorer(provider)
    rows = []
    for frames in frame_counts:
        k = frames * patches_per_frame
        times = []
        for i in range(num_queries):
            response = query(
                TextQuery(f"bench query {i}", k=k, n=frames),
                idx,
                provider,
                scorer,
                probes=min(cfg.probes, cfg.centroids),
            )
            times.append(response.timings.rerank)
        rows.append(
            {
                "frames": frames,
                "median_rerank_seconds": f"{statistics.median(times):.9f}",
            }
        )
    return ["frames", "median_rerank_seconds"], rows


def bench_recall(cfg, probe_values, corpus_size: int = 10000, num_queries: int = 100, k: int = 10):
    """Mean recall@k against the brute-force oracle for each probe count."""
    vectors = random_unit_vectors(corpus_size, cfg.dim, seed=cfg.seed)
    pq_config = pq.PQConfig(
        dim=cfg.dim, subspaces=cfg.subspaces, centroids=cfg.centroids,
        train_iters=cfg.train_iters, seed=cfg.seed,
    )
    idx = index_mod.build(collection_from_vectors(vectors), pq_config)
    queries = random_unit_vectors(num_queries, cfg.dim, seed=cfg.seed + 101).astype(np.float64)
    oracle = [evaluation.brute_force_search(q, vectors, k)[0] for q in queries]
    rows = []
    for probes in probe_values:
        params = search.SearchParams(probes=probes, k=k)
        recalls = [
            evaluation.recall_against_oracle(
                [hit.patch_ref for hit in search.search(idx, q, params)], oracle[i]
            )
            for i, q in enumerate(queries)
        ]
        rows.append({"probes": probes, "mean_recall": f"{statistics.mean(recalls):.6f}"})
    return ["probes", "mean_recall"], rows


def bench_kernels(cfg, size: int = 100000, repeats: int = 5):
    """Hot-kernel timings, numba vs numpy, on identical inputs."""
    rng = np.random.default_rng(cfg.seed)
    sub = rng.standard_normal((size, 8)).astype(np.float32)
    cents = rng.standard_normal((cfg.centroids, 8)).astype(np.float32)
    assign, _ = kernels.nearest_centroids_np(sub, cents)
    codes = rng.integers(0, cfg.centroids, size=(size, cfg.subspaces)).astype(pq.CODE_DTYPE)
    residuals = rng.standard_normal((size, cfg.dim)).astype(np.float64) * 0.01
    lut = rng.standard_normal((cfg.subspaces, cfg.centroids))
    qv = rng.standard_normal(cfg.dim)
    cand = np.arange(size, dtype=np.int64)
    frame_a = rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8)
    frame_b = rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8)

    cases = {
        "nearest_centroids": (
            lambda fn: fn(sub, cents),
            kernels.nearest_centroids_np,
            kernels.nearest_centroids_nb if kernels.HAS_NUMBA else None,
        ),
        "cluster_sums": (
            lambda fn: fn(sub, assign, cfg.centroids),
            kernels.cluster_sums_np,
            kernels.cluster_sums_nb if kernels.HAS_NUMBA else None,
        ),
        "approx_scores": (
            lambda fn: fn(cand, codes, residuals, lut, qv),
            kernels.approx_scores_np,
            kernels.approx_scores_nb if kernels.HAS_NUMBA else None,
        ),
        "mean_abs_diff": (
            lambda fn: fn(frame_a, frame_b),
            kernels.mean_abs_diff_np,
            kernels.mean_abs_diff_nb if kernels.HAS_NUMBA else None,
        ),
    }

    def best_time(call, fn):
        call(fn)  # warm up (and JIT-compile the numba path)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            call(fn)
            times.append(time.perf_counter() - t0)
        return min(times)

    rows = []
    for name, (call, fn_np, fn_nb) in cases.items():
        t_np = best_time(call, fn_np)
        t_nb = best_time(call, fn_nb) if fn_nb is not None else float("nan")
        speedup = t_np / t_nb if fn_nb is not None and t_nb > 0 else float("nan")
        rows.append(
            {
                "kernel": name,
                "n": size,
                "numpy_seconds": f"{t_np:.9f}",
                "numba_seconds": f"{t_nb:.9f}",
                "speedup": f"{speedup:.2f}",
            }
        )
    return ["kernel", "n", "numpy_seconds", "numba_seconds", "speedup"], rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
