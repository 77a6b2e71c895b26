"""Product-quantized inverted multi-index engine for text-to-visual queries
over per-frame video patch embeddings, with a two-stage search strategy."""

from . import (
    engine,
    errors,
    evaluation,
    index,
    kernels,
    metadata,
    model,
    pq,
    providers,
    search,
    summary,
    synthetic,
)
from .engine import ConstantScorer, ExternalScorer, ReferenceScorer, TextQuery, query
from .index import InvertedMultiIndex, build, insert, load, persist
from .model import BoundingBox, PatchIdentity, PatchRecord
from .pq import PQConfig
from .search import ScoredHit, SearchParams
from .summary import FrameSequence, KeyframePolicy, PatchCollection, build_collection

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ConstantScorer",
    "ExternalScorer",
    "FrameSequence",
    "InvertedMultiIndex",
    "KeyframePolicy",
    "PatchCollection",
    "PatchIdentity",
    "PatchRecord",
    "PQConfig",
    "ReferenceScorer",
    "ScoredHit",
    "SearchParams",
    "TextQuery",
    "build",
    "build_collection",
    "engine",
    "errors",
    "evaluation",
    "index",
    "insert",
    "kernels",
    "load",
    "metadata",
    "model",
    "persist",
    "pq",
    "providers",
    "query",
    "search",
    "summary",
    "synthetic",
    "__version__",
]
