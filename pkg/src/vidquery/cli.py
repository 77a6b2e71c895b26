"""Command-line surface: ingest, build, query, eval, bench, rebuild.

Every command is deterministic for a fixed config + seed: output files are
byte-identical across runs.  Wall-clock timings therefore never go into the
primary output files; they are printed, and eval writes them to a separate
``<report>.latency.json``.

Exit codes: 0 ok, 2 IO/parse/usage failure, 3 insufficient training data,
4 empty index, 5 empty ground truth.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys

import numpy as np

from . import bench as bench_mod
from . import evaluation, index as index_mod, metadata, pq, summary
from .config import RunConfig, load_config
from .engine import ConstantScorer, ExternalScorer, ReferenceScorer, TextQuery, query
from .errors import (
    EmptyGroundTruthError,
    EmptyIndexError,
    InsufficientTrainingDataError,
    VidQueryError,
)
from .model import BoundingBox
from .providers import SyntheticProvider, SyntheticTextProvider
from .summary import Frame, FrameSequence, KeyframePolicy, build_collection
from .synthetic import planted_sequence, uniform_sequence

EXIT_IO = 2
EXIT_TRAINING_DATA = 3
EXIT_EMPTY_INDEX = 4
EXIT_EMPTY_TRUTH = 5

_CONFIG_FLAGS = {
    "dim": int,
    "subspaces": int,
    "centroids": int,
    "train_iters": int,
    "seed": int,
    "probes": int,
    "k": int,
    "n": int,
    "keyframe_policy": str,
    "keyframe_interval": int,
    "keyframe_threshold": float,
    "patch_size": int,
    "synthetic_frames": int,
    "synthetic_height": int,
    "synthetic_width": int,
    "background_label": int,
    "plant_label": int,
    "plant_frame": int,
    "corpus": str,
    "index": str,
    "ground_truth": str,
    "manifest": str,
    "report": str,
    "scorer": str,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (flags > file > defaults)")
    for name, typ in _CONFIG_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    return load_config(args.config, overrides)


def _keyframe_policy(cfg: RunConfig) -> KeyframePolicy:
    if cfg.keyframe_policy == "fixed_interval":
        return KeyframePolicy.fixed_interval(cfg.keyframe_interval)
    return KeyframePolicy.frame_difference(cfg.keyframe_threshold)


def _read_frames_jsonl(path) -> list[FrameSequence]:
    """Frames JSONL: {video_id, frame_id, timestamp, pixels[H][W][3]} per line."""
    by_video: dict[str, list[Frame]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
                frame = Frame(
                    frame_id=str(rec["frame_id"]),
                    pixels=np.asarray(rec["pixels"], dtype=np.uint8),
                    timestamp=float(rec["timestamp"]),
                )
                video_id = str(rec["video_id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad frame record ({exc})") from exc
            by_video.setdefault(video_id, []).append(frame)
    sequences = []
    for video_id, frames in by_video.items():
        frames.sort(key=lambda f: f.timestamp)
        sequences.append(FrameSequence(video_id=video_id, frames=frames))
    return sequences


def _sniff_input_kind(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            rec = json.loads(raw)
            if "pixels" in rec:
                return "frames"
            if "embedding" in rec:
                return "exchange"
            break
    raise ValueError(f"{path}: neither a frames nor an embedding-exchange JSONL")


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args)
    policy = _keyframe_policy(cfg)
    provider = SyntheticProvider(seed=cfg.seed, dim=cfg.dim)

    if args.synthetic:
        rows = cfg.synthetic_height // cfg.patch_size
        cols = cfg.synthetic_width // cfg.patch_size
        if rows < 1 or cols < 1:
            raise ValueError("synthetic frame smaller than one patch")
        if args.plant:
            plant_frame = None if cfg.plant_frame < 0 else cfg.plant_frame
            seq, planted = planted_sequence(
                cfg.seed,
                cfg.synthetic_frames,
                rows,
                cols,
                cfg.patch_size,
                background_label=cfg.background_label,
                planted_label=cfg.plant_label,
                planted_frame=plant_frame,
            )
            print(f"planted frame: {planted}")
            sequences = [seq]
        else:
            sequences = [
                uniform_sequence(
                    f"synthetic-{cfg.seed}",
                    cfg.synthetic_frames,
                    rows,
                    cols,
                    cfg.patch_size,
                    label=cfg.background_label,
                )
            ]
    elif args.input is not None:
        kind = _sniff_input_kind(args.input)
        if kind == "exchange":
            collection = summary.collection_from_exchange(args.input)
            summary.write_exchange(collection, cfg.corpus)
            metadata.store_from_collection(collection).save(cfg.corpus_meta)
            s = collection.stats
            print(
                f"frames={s.frames} keyframes={s.keyframes} "
                f"patches={s.patches} dropped={s.dropped}"
            )
            return 0
        sequences = _read_frames_jsonl(args.input)
    else:
        raise ValueError("ingest needs --input FILE or --synthetic")

    collection = summary.PatchCollection()
    for seq in sequences:
        part = build_collection(seq, policy, cfg.patch_size, provider)
        collection.records.extend(part.records)
        collection.timestamps.update(part.timestamps)
        collection.stats.frames += part.stats.frames
        collection.stats.keyframes += part.stats.keyframes
        collection.stats.patches += part.stats.patches
        collection.stats.dropped += part.stats.dropped
    summary.write_exchange(collection, cfg.corpus)
    metadata.store_from_collection(collection).save(cfg.corpus_meta)
    s = collection.stats
    print(f"frames={s.frames} keyframes={s.keyframes} patches={s.patches} dropped={s.dropped}")
    return 0


def _load_corpus(cfg: RunConfig) -> summary.PatchCollection:
    timestamps = None
    try:
        store = metadata.MetadataStore.load(cfg.corpus_meta)
        timestamps = {
            (m.video_id, m.identity.frame_id): m.timestamp
            for m in (store.get(i) for i in store.identities())
        }
    except OSError:
        pass
    return summary.collection_from_exchange(cfg.corpus, timestamps=timestamps)


def cmd_build(args) -> int:
    cfg = _config_from_args(args)
    collection = _load_corpus(cfg)
    pq_config = pq.PQConfig(
        dim=cfg.dim,
        subspaces=cfg.subspaces,
        centroids=cfg.centroids,
        train_iters=cfg.train_iters,
        seed=cfg.seed,
    )
    idx = index_mod.build(collection, pq_config)
    idx.validate()
    index_mod.persist(idx, cfg.index)
    metadata.store_from_collection(collection).save(cfg.index_meta)
    distortion = pq.quantization_distortion(collection.embedding_matrix(), idx.codebooks)
    total_postings = idx.size * cfg.subspaces
    print(
        f"patches={idx.size} postings={total_postings} "
        f"subspaces={cfg.subspaces} distortion={distortion:.6f}"
    )
    print(f"index written to {cfg.index}")
    return 0


def _make_scorer(name: str, text_provider):
    if name == "reference":
        return ReferenceScorer(text_provider)
    if name == "constant":
        return ConstantScorer()
    if name.startswith("external:"):
        command = name.split(":", 1)[1]
        if not command:
            raise ValueError("external scorer needs a command: external:<cmd>")
        return ExternalScorer(command)
    raise ValueError(f"unknown scorer {name!r} (reference, constant, external:<cmd>)")


def cmd_query(args) -> int:
    cfg = _config_from_args(args)
    idx = index_mod.load(cfg.index)
    provider = SyntheticTextProvider(seed=cfg.seed, dim=cfg.dim)
    scorer = _make_scorer(cfg.scorer, provider)
    text_query = TextQuery(args.text, k=cfg.k, n=cfg.n)
    try:
        response = query(text_query, idx, provider, scorer, probes=cfg.probes)
    finally:
        if hasattr(scorer, "close"):
            scorer.close()
    manifest = {
        "query_id": args.query_id or args.text,
        "text": args.text,
        "k": cfg.k,
        "n": cfg.n,
        "probes": cfg.probes,
        "seed": cfg.seed,
        "dim": cfg.dim,
        "scorer": cfg.scorer,
        "results": [
            {
                "rank": r.rank,
                "video_id": r.video_id,
                "frame_id": r.frame_id,
                "boxes": [b.as_list() for b in r.boxes],
                "rerank_score": r.rerank_score,
                "approx_score": r.approx_score,
                "exact_score": r.exact_score,
                "patch_index": r.patch_index,
            }
            for r in response.results
        ],
        "hits": [
            {
                "video_id": h.identity.video_id,
                "frame_id": h.frame_id,
                "patch_index": h.identity.patch_index,
                "approx_score": h.approx_score,
                "exact_score": h.exact_score,
            }
            for h in response.hits
        ],
    }
    with open(cfg.manifest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    t = response.timings
    print(
        f"frames={len(response.results)} processing={t.processing:.6f}s "
        f"fast_search={t.fast_search:.6f}s rerank={t.rerank:.6f}s total={t.total:.6f}s"
    )
    print(f"manifest written to {cfg.manifest}")
    return 0


def _manifest_oracle(cfg: RunConfig, manifest: dict):
    """Brute-force top-k patch identities for the manifest's query text."""
    try:
        collection = summary.collection_from_exchange(cfg.corpus)
    except OSError:
        return None
    provider = SyntheticTextProvider(seed=int(manifest["seed"]), dim=int(manifest["dim"]))
    q = provider.embed(manifest["text"])
    order, _ = evaluation.brute_force_search(q, collection.embedding_matrix(), int(manifest["k"]))
    return [
        (
            collection.records[i].identity.video_id,
            collection.records[i].identity.frame_id,
            collection.records[i].identity.patch_index,
        )
        for i in order
    ]


def _manifest_latency(cfg: RunConfig, manifest: dict, runs: int):
    """Median phase latencies from re-running the manifest's query."""
    if not str(manifest["scorer"]).startswith(("reference", "constant")):
        return None
    try:
        idx = index_mod.load(cfg.index)
    except (OSError, VidQueryError):
        return None
    provider = SyntheticTextProvider(seed=int(manifest["seed"]), dim=int(manifest["dim"]))
    scorer = _make_scorer(str(manifest["scorer"]), provider)
    text_query = TextQuery(manifest["text"], k=int(manifest["k"]), n=int(manifest["n"]))
    timings = []
    for _ in range(runs):
        response = query(text_query, idx, provider, scorer, probes=int(manifest["probes"]))
        timings.append(response.timings)
    return {
        phase: statistics.median(getattr(t, phase) for t in timings)
        for phase in ("processing", "fast_search", "rerank", "total")
    }


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    truths = evaluation.load_ground_truth(cfg.ground_truth)
    if not truths:
        raise EmptyGroundTruthError(f"{cfg.ground_truth} holds no positives")
    manifest_paths = args.manifests or [cfg.manifest]
    per_query = []
    latency_rows = []
    for path in manifest_paths:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        qid = str(manifest["query_id"])
        if qid not in truths:
            raise EmptyGroundTruthError(f"no ground truth for query {qid!r}")
        truth = truths[qid]
        ranked = [
            (str(r["frame_id"]), BoundingBox.from_list(b))
            for r in manifest["results"]
            for b in r["boxes"]
        ]
        prefix_length = args.multiplier * len(truth)
        ranked = ranked[:prefix_length]
        avep = evaluation.average_precision(ranked, truth) if ranked else 0.0
        curve = evaluation.precision_recall_curve(ranked, truth) if ranked else []
        recall = None
        oracle = _manifest_oracle(cfg, manifest)
        if oracle is not None:
            retrieved = [
                (str(h["video_id"]), str(h["frame_id"]), int(h["patch_index"]))
                for h in manifest["hits"]
            ]
            recall = evaluation.recall_against_oracle(retrieved, oracle)
        per_query.append(
            {
                "query_id": qid,
                "avep": avep,
                "recall_at_k": recall,
                "prefix_length": prefix_length,
                "precision_recall_curve": [[r, p] for r, p in curve],
            }
        )
        latency = _manifest_latency(cfg, manifest, args.runs)
        if latency is not None:
            latency_rows.append({"query_id": qid, "latency": latency})

    aveps = [row["avep"] for row in per_query]
    recalls = [row["recall_at_k"] for row in per_query if row["recall_at_k"] is not None]
    report = {
        "queries": per_query,
        "mean_avep": statistics.mean(aveps),
        "mean_recall_at_k": statistics.mean(recalls) if recalls else None,
    }
    with open(cfg.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    if latency_rows:
        with open(cfg.report + ".latency.json", "w", encoding="utf-8") as fh:
            json.dump({"queries": latency_rows, "runs": args.runs}, fh, indent=2)
            fh.write("\n")

    header = f"{'query_id':<24} {'avep':>8} {'recall@k':>9} {'prefix':>7}"
    print(header)
    print("-" * len(header))
    for row in per_query:
        recall_txt = "-" if row["recall_at_k"] is None else f"{row['recall_at_k']:.4f}"
        print(
            f"{row['query_id']:<24} {row['avep']:>8.4f} {recall_txt:>9} "
            f"{row['prefix_length']:>7}"
        )
    print(f"mean AveP: {report['mean_avep']:.4f}")
    if report["mean_recall_at_k"] is not None:
        print(f"mean recall@k: {report['mean_recall_at_k']:.4f}")
    print(f"report written to {cfg.report}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    if args.suite == "scaling":
        sizes = [int(s) for s in args.sizes.split(",")]
        header, rows = bench_mod.bench_scaling(cfg, sizes, num_queries=args.bench_queries)
    elif args.suite == "rerank":
        frames = [int(s) for s in args.frames.split(",")]
        header, rows = bench_mod.bench_rerank(cfg, frames, num_queries=args.bench_queries)
    elif args.suite == "recall":
        probe_values = [int(s) for s in args.probe_values.split(",")]
        header, rows = bench_mod.bench_recall(cfg, probe_values)
    else:
        header, rows = bench_mod.bench_kernels(cfg)
    bench_mod.write_csv(args.out, header, rows)
    for row in rows:
        print(",".join(str(row[col]) for col in header))
    print(f"csv written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidquery",
        description="Product-quantized inverted multi-index engine for video object queries.",
    )
    parser.add_argument("--config", default=None, help="TOML config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="frames/exchange JSONL or synthetic corpus -> exchange + metadata JSONL")
    p_ingest.add_argument("--input", default=None, help="frames JSONL or embedding-exchange JSONL")
    p_ingest.add_argument("--synthetic", action="store_true", help="generate a synthetic corpus")
    p_ingest.add_argument("--plant", action="store_true", help="plant one labelled frame in the synthetic corpus")
    _add_config_flags(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_build = sub.add_parser("build", help="train codebooks and build the index from ingested files")
    _add_config_flags(p_build)
    p_build.set_defaults(func=cmd_build)

    p_rebuild = sub.add_parser("rebuild", help="retrain codebooks and rebuild the index (for drift)")
    _add_config_flags(p_rebuild)
    p_rebuild.set_defaults(func=cmd_build)

    p_query = sub.add_parser("query", help="run a free-text query against the index")
    p_query.add_argument("text", help="query text")
    p_query.add_argument("--query-id", default=None, help="id recorded in the manifest")
    _add_config_flags(p_query)
    p_query.set_defaults(func=cmd_query)

    p_eval = sub.add_parser("eval", help="score result manifests against ground truth")
    p_eval.add_argument("--manifests", nargs="*", default=None, help="manifest files (default: config manifest)")
    p_eval.add_argument("--multiplier", type=int, default=10, help="prefix = multiplier x |truth|")
    p_eval.add_argument("--runs", type=int, default=5, help="re-runs for latency medians")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="scalability / recall / kernel benchmarks -> CSV")
    p_bench.add_argument("--suite", choices=("scaling", "rerank", "recall", "kernels"), default="scaling")
    p_bench.add_argument("--out", default="bench.csv")
    p_bench.add_argument("--sizes", default="10000,100000", help="scaling suite corpus sizes")
    p_bench.add_argument("--frames", default="1,2,4,8,16,32", help="rerank suite frame counts")
    p_bench.add_argument("--probe-values", dest="probe_values", default="1,2,4,8,16")
    p_bench.add_argument("--bench-queries", type=int, default=50)
    _add_config_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InsufficientTrainingDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING_DATA
    except EmptyIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_INDEX
    except EmptyGroundTruthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_TRUTH
    except (VidQueryError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
