"""Retrieval evaluation: IoU matching, average precision, recall, latency.

A ranked hit counts as a true positive when it greedily matches an unused
ground-truth box of the same frame at IoU above the threshold (0.5 by
default).  AveP is the discrete area under the precision-recall curve.  The
brute-force scan here is the oracle every approximate result is judged
against.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroundTruthError
from .model import BoundingBox


@dataclass(frozen=True)
class GroundTruth:
    """Positive (frame_id, box) pairs of one query; unique per pair."""

    positives: tuple

    def __post_init__(self):
        keys = [(fid, tuple(box.as_list())) for fid, box in self.positives]
        if len(set(keys)) != len(keys):
            raise ValueError("ground-truth positives must be unique")

    def __len__(self) -> int:
        return len(self.positives)


@dataclass
class EvalReport:
    """Per-query evaluation: AveP, PR curve, recall vs oracle, phase latency."""

    avep: float
    precision_recall_curve: list
    recall_at_k: float | None = None
    latency: dict = field(default_factory=dict)
    prefix_length: int = 0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 for disjoint or degenerate boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def match_hits(ranked, truth: GroundTruth, iou_threshold: float = 0.5) -> list:
    """Greedy one-to-one matching by rank order; best IoU above threshold wins.

    ``ranked`` is a score-descending list of (frame_id, box).  Returns one
    bool per hit: True where the hit consumed a ground-truth positive.
    """
    if len(truth) == 0:
        raise EmptyGroundTruthError("no ground-truth positives")
    used = [False] * len(truth)
    flags = []
    for frame_id, box in ranked:
        best_iou = 0.0
        best_j = None
        for j, (tf, tbox) in enumerate(truth.positives):
            if used[j] or tf != frame_id:
                continue
            value = iou(box, tbox)
            if value >= iou_threshold and value > best_iou:
                best_iou = value
                best_j = j
        if best_j is None:
            flags.append(False)
        else:
            used[best_j] = True
            flags.append(True)
    return flags


def precision_recall_curve(ranked, truth: GroundTruth, iou_threshold: float = 0.5) -> list:
    """(recall, precision) after each rank; recalls are non-decreasing."""
    flags = match_hits(ranked, truth, iou_threshold)
    curve = []
    tp = 0
    for k, flag in enumerate(flags, start=1):
        tp += int(flag)
        curve.append((tp / len(truth), tp / k))
    return curve


def average_precision(ranked, truth: GroundTruth, iou_threshold: float = 0.5) -> float:
    """Discrete AveP: sum of precision at true-positive ranks over positives."""
    flags = match_hits(ranked, truth, iou_threshold)
    tp = 0
    total = 0.0
    for k, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
            total += tp / k
    return total / len(truth)


def ranked_objects(results) -> list:
    """Flatten engine results into a rank-ordered list of (frame_id, box)."""
    out = []
    for result in results:
        for box in result.boxes:
            out.append((result.frame_id, box))
    return out


def recall_against_oracle(retrieved, oracle) -> float:
    """|retrieved ∩ oracle| / |oracle| over patch handles."""
    oracle = list(oracle)
    if not oracle:
        return 0.0
    return len(set(retrieved) & set(oracle)) / len(oracle)


def evaluate_query(
    run,
    truth: GroundTruth,
    *,
    multiplier: int = 10,
    runs: int = 5,
    iou_threshold: float = 0.5,
    oracle_handles=None,
) -> EvalReport:
    """Run the engine, score its ranking over the top-``multiplier``x prefix.

    ``run`` is a zero-argument callable returning a QueryResponse; it is
    invoked ``runs`` times (>= 1) and phase latencies are reported as medians
    over those runs.  The ranked-object prefix length is
    ``multiplier * len(truth)``.
    """
    if len(truth) == 0:
        raise EmptyGroundTruthError("no ground-truth positives")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    responses = [run() for _ in range(runs)]
    response = responses[0]
    prefix_length = multiplier * len(truth)
    ranked = ranked_objects(response.results)[:prefix_length]
    curve = precision_recall_curve(ranked, truth, iou_threshold) if ranked else []
    avep = average_precision(ranked, truth, iou_threshold) if ranked else 0.0
    recall = None
    if oracle_handles is not None:
        retrieved = [hit.patch_ref for hit in response.hits]
        recall = recall_against_oracle(retrieved, oracle_handles)
    latency = {
        phase: statistics.median(getattr(r.timings, phase) for r in responses)
        for phase in ("processing", "fast_search", "rerank", "total")
    }
    return EvalReport(
        avep=avep,
        precision_recall_curve=curve,
        recall_at_k=recall,
        latency=latency,
        prefix_length=prefix_length,
    )


def brute_force_search(q: np.ndarray, vectors: np.ndarray, k: int):
    """Exact cosine top-k by naive scan; the oracle for every approximate path.

    Scores each row with a float64 dot product and orders by score descending,
    ties by smallest row index.  Returns (indices, scores).
    """
    q64 = np.asarray(q, dtype=np.float64)
    x = np.asarray(vectors)
    scores = np.empty(x.shape[0], dtype=np.float64)
    for i in range(x.shape[0]):
        scores[i] = np.dot(x[i].astype(np.float64), q64)
    order = np.lexsort((np.arange(x.shape[0]), -scores))[:k]
    return order.astype(np.int64), scores[order]


def load_ground_truth(path) -> dict:
    """Ground-truth JSONL {query_id, frame_id, box} grouped per query."""
    grouped: dict[str, list] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                qid = str(rec["query_id"])
                pair = (str(rec["frame_id"]), BoundingBox.from_list(rec["box"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad record ({exc})") from exc
            grouped.setdefault(qid, []).append(pair)
    return {qid: GroundTruth(positives=tuple(pairs)) for qid, pairs in grouped.items()}


def report_to_dict(report: EvalReport, include_latency: bool = True) -> dict:
    out = {
        "avep": report.avep,
        "recall_at_k": report.recall_at_k,
        "prefix_length": report.prefix_length,
        "precision_recall_curve": [[r, p] for r, p in report.precision_recall_curve],
    }
    if include_latency:
        out["latency"] = dict(report.latency)
    return out
