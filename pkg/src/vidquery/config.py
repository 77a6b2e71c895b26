"""Run configuration: defaults, TOML file, flag overrides (flags win)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib


@dataclass
class RunConfig:
    """Everything a command needs; internally consistent or it refuses to run."""

    # quantizer / search
    dim: int = 64
    subspaces: int = 8
    centroids: int = 16
    train_iters: int = 25
    seed: int = 0
    probes: int = 4
    k: int = 50
    n: int = 10
    # keyframes / grid
    keyframe_policy: str = "fixed_interval"
    keyframe_interval: int = 1
    keyframe_threshold: float = 0.05
    patch_size: int = 32
    # synthetic corpus generation
    synthetic_frames: int = 100
    synthetic_height: int = 128
    synthetic_width: int = 128
    background_label: int = 0
    plant_label: int = 3
    plant_frame: int = -1  # -1 draws the position from the seed
    # paths
    corpus: str = "corpus.jsonl"
    index: str = "index.vidx"
    ground_truth: str = "ground_truth.jsonl"
    manifest: str = "manifest.json"
    report: str = "report.json"
    scorer: str = "reference"

    @property
    def index_meta(self) -> str:
        return f"{self.index}.meta.jsonl"

    @property
    def corpus_meta(self) -> str:
        return f"{self.corpus}.meta.jsonl"

    def validate(self) -> None:
        if self.dim <= 0 or self.subspaces <= 0 or self.dim % self.subspaces:
            raise ValueError(f"dim {self.dim} must be a positive multiple of subspaces {self.subspaces}")
        if not (1 <= self.n <= self.k):
            raise ValueError(f"need 1 <= n <= k, got n={self.n} k={self.k}")
        if not (1 <= self.probes <= self.centroids):
            raise ValueError(f"need 1 <= probes <= centroids, got {self.probes} vs {self.centroids}")
        if self.train_iters < 1:
            raise ValueError("train_iters must be >= 1")
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.keyframe_policy not in ("fixed_interval", "frame_difference"):
            raise ValueError(f"unknown keyframe policy {self.keyframe_policy!r}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """defaults < TOML file < explicit flag overrides; then validated."""
    values: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        for key, value in data.items():
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}: unknown config key {key!r}")
            values[key] = value
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
