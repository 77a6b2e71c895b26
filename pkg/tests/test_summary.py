"""Keyframe extraction, patch grids, frame summaries, and the exchange format."""

import numpy as np
import pytest

from vidquery.errors import (
    EmptySequenceError,
    PatchLargerThanFrameError,
    ProviderDimensionMismatchError,
)
from vidquery.model import BoundingBox
from vidquery.providers import FileProvider, SyntheticProvider
from vidquery.summary import (
    Frame,
    FrameSequence,
    KeyframePolicy,
    ProviderOutput,
    build_collection,
    build_patch_grid,
    collection_from_exchange,
    extract_keyframes,
    summarize_frame,
    write_exchange,
)
from vidquery.synthetic import label_frame, uniform_sequence


def gray_frames(values, shape=(8, 8)):
    """One frame per intensity value, timestamps 0, 1, 2, ..."""
    frames = []
    for i, value in enumerate(values):
        pixels = np.full((*shape, 3), value, dtype=np.uint8)
        frames.append(Frame(frame_id=f"f{i:04d}", pixels=pixels, timestamp=float(i)))
    return FrameSequence(video_id="v", frames=frames)


class TestExtractKeyframes:
    def test_identical_frames_give_one_keyframe(self):
        seq = gray_frames([100] * 100)
        picked = extract_keyframes(seq, KeyframePolicy.frame_difference(0.05))
        assert [f.frame_id for f in picked] == ["f0000"]

    def test_fixed_interval(self):
        seq = gray_frames(range(100))
        picked = extract_keyframes(seq, KeyframePolicy.fixed_interval(10))
        assert [f.frame_id for f in picked] == [f"f{i:04d}" for i in range(0, 100, 10)]

    def test_alternating_black_white_selects_all(self):
        values = [0 if i % 2 == 0 else 255 for i in range(100)]
        seq = gray_frames(values)
        picked = extract_keyframes(seq, KeyframePolicy.frame_difference(0.5))
        # reference scan: mean change between consecutive frames is 255/255 = 1
        expected = ["f0000"]
        last = seq.frames[0].pixels.astype(np.int64)
        for frame in seq.frames[1:]:
            change = np.abs(frame.pixels.astype(np.int64) - last).mean() / 255.0
            if change > 0.5:
                expected.append(frame.frame_id)
                last = frame.pixels.astype(np.int64)
        assert len(expected) == 100
        assert [f.frame_id for f in picked] == expected

    def test_threshold_above_one_keeps_only_first(self):
        values = [0 if i % 2 == 0 else 255 for i in range(20)]
        picked = extract_keyframes(gray_frames(values), KeyframePolicy.frame_difference(1.5))
        assert [f.frame_id for f in picked] == ["f0000"]

    def test_tiny_threshold_selects_every_changed_frame(self):
        seq = gray_frames([0, 10, 10, 20, 20, 30])
        picked = extract_keyframes(seq, KeyframePolicy.frame_difference(1e-9))
        assert [f.frame_id for f in picked] == ["f0000", "f0001", "f0003", "f0005"]

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            extract_keyframes(FrameSequence("v", []), KeyframePolicy.fixed_interval(1))

    def test_policy_field_validation(self):
        with pytest.raises(ValueError):
            KeyframePolicy(kind="fixed_interval", interval=2, threshold=0.5)
        with pytest.raises(ValueError):
            KeyframePolicy(kind="frame_difference")
        with pytest.raises(ValueError):
            KeyframePolicy(kind="scenic", interval=1)


class TestBuildPatchGrid:
    def test_square_grid(self):
        grid = build_patch_grid(768, 768, 32)
        assert grid.num_patches == 576
        assert grid.rows == grid.cols == 24

    def test_floor_division(self):
        grid = build_patch_grid(100, 64, 32)
        assert (grid.rows, grid.cols, grid.num_patches) == (3, 2, 6)

    def test_patch_larger_than_frame(self):
        with pytest.raises(PatchLargerThanFrameError):
            build_patch_grid(31, 64, 32)

    def test_tiles_cover_region_without_overlap(self):
        grid = build_patch_grid(100, 64, 32)
        area = sum(box.area() for box in grid.default_boxes)
        assert area == 3 * 32 * 2 * 32
        for i, a in enumerate(grid.default_boxes):
            for b in grid.default_boxes[i + 1 :]:
                ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
                iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
                assert ix <= 0 or iy <= 0

    def test_row_major_order(self):
        grid = build_patch_grid(64, 96, 32)
        assert grid.default_boxes[0] == BoundingBox(0, 0, 32, 32)
        assert grid.default_boxes[1] == BoundingBox(32, 0, 64, 32)
        assert grid.default_boxes[3] == BoundingBox(0, 32, 32, 64)


class _StubProvider:
    """Fixed outputs, for exercising the summarize contract."""

    def __init__(self, outputs):
        self.outputs = outputs

    def outputs_for_frame(self, video_id, frame_id, pixels, grid):
        return self.outputs


class TestSummarizeFrame:
    def test_zero_offsets_keep_default_boxes(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.ones(8), (0.0, 0.0, 0.0, 0.0)) for _ in range(4)]
        records, dropped = summarize_frame("v", frame, grid, _StubProvider(outputs))
        assert dropped == 0
        assert [r.box for r in records] == list(grid.default_boxes)

    def test_synthetic_reproducible_bit_for_bit(self):
        grid = build_patch_grid(64, 64, 32)
        frame = label_frame("f0", 0.0, np.array([[1, 2], [3, 4]]), 32)
        first, _ = summarize_frame("v", frame, grid, SyntheticProvider(seed=42, dim=16))
        second, _ = summarize_frame("v", frame, grid, SyntheticProvider(seed=42, dim=16))
        assert len(first) == 4
        for a, b in zip(first, second):
            assert a.identity == b.identity
            np.testing.assert_array_equal(a.embedding, b.embedding)
            assert a.box == b.box

    def test_offsets_clamped_to_frame(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.ones(8), (-100.0, -100.0, 100.0, 100.0)) for _ in range(4)]
        records, _ = summarize_frame("v", frame, grid, _StubProvider(outputs))
        for rec in records:
            assert rec.box == BoundingBox(0.0, 0.0, 64.0, 64.0)

    def test_zero_vector_patches_dropped_with_count(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.ones(8), (0, 0, 0, 0)) for _ in range(4)]
        outputs[2] = ProviderOutput(np.zeros(8), (0, 0, 0, 0))
        records, dropped = summarize_frame("v", frame, grid, _StubProvider(outputs))
        assert dropped == 1
        assert len(records) == 3
        assert [r.identity.patch_index for r in records] == [0, 1, 3]

    def test_inconsistent_dimension_rejected(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.ones(8), (0, 0, 0, 0)) for _ in range(4)]
        outputs[1] = ProviderOutput(np.ones(12), (0, 0, 0, 0))
        with pytest.raises(ProviderDimensionMismatchError):
            summarize_frame("v", frame, grid, _StubProvider(outputs))

    def test_wrong_output_count_rejected(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.ones(8), (0, 0, 0, 0)) for _ in range(3)]
        with pytest.raises(ProviderDimensionMismatchError):
            summarize_frame("v", frame, grid, _StubProvider(outputs))

    def test_embeddings_normalized(self):
        grid = build_patch_grid(64, 64, 32)
        frame = Frame("f0", np.zeros((64, 64, 3), dtype=np.uint8), 0.0)
        outputs = [ProviderOutput(np.full(8, 7.0), (0, 0, 0, 0)) for _ in range(4)]
        records, _ = summarize_frame("v", frame, grid, _StubProvider(outputs))
        for rec in records:
            assert abs(np.linalg.norm(rec.embedding.astype(np.float64)) - 1.0) <= 1e-6


class TestBuildCollection:
    def test_single_keyframe_six_patches(self):
        seq = uniform_sequence("v", 1, rows=3, cols=2, patch_size=32)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 32, SyntheticProvider(0, dim=16))
        assert len(col) == 6
        assert col.stats.keyframes == 1

    def test_ten_keyframes_full_grid(self):
        seq = uniform_sequence("v", 10, rows=24, cols=24, patch_size=32)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 32, SyntheticProvider(0, dim=16))
        assert len(col) == 5760
        assert col.stats.dropped == 0

    def test_empty_sequence(self):
        with pytest.raises(EmptySequenceError):
            build_collection(
                FrameSequence("v", []), KeyframePolicy.fixed_interval(1), 32,
                SyntheticProvider(0, dim=16),
            )

    def test_identities_unique(self):
        seq = uniform_sequence("v", 5, rows=2, cols=2, patch_size=16)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, SyntheticProvider(0, dim=16))
        identities = [r.identity for r in col.records]
        assert len(set(identities)) == len(identities)

    def test_boxes_within_frame_bounds(self):
        seq = uniform_sequence("v", 3, rows=2, cols=2, patch_size=16)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, SyntheticProvider(3, dim=16))
        for rec in col.records:
            assert 0.0 <= rec.box.x_min <= rec.box.x_max <= 32.0
            assert 0.0 <= rec.box.y_min <= rec.box.y_max <= 32.0


class TestExchangeFormat:
    def test_round_trip(self, tmp_path):
        seq = uniform_sequence("v", 3, rows=2, cols=2, patch_size=16)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, SyntheticProvider(5, dim=16))
        path = tmp_path / "corpus.jsonl"
        write_exchange(col, path)
        loaded = collection_from_exchange(path, timestamps=col.timestamps)
        assert len(loaded) == len(col)
        for a, b in zip(col.records, loaded.records):
            assert a.identity == b.identity
            np.testing.assert_array_equal(a.embedding, b.embedding)
            assert a.box == b.box
        assert loaded.timestamps == col.timestamps

    def test_write_is_deterministic(self, tmp_path):
        seq = uniform_sequence("v", 2, rows=2, cols=2, patch_size=16)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, SyntheticProvider(5, dim=16))
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        write_exchange(col, a)
        write_exchange(col, b)
        assert a.read_bytes() == b.read_bytes()

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"video_id": "v", "frame_id": "f", "patch_index": 0, '
                        '"embedding": [1.0], "box": [0, 0, 1, 1]}\nnot json\n')
        with pytest.raises(ValueError, match="line 2"):
            collection_from_exchange(path)

    def test_missing_field_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"video_id": "v"}\n')
        with pytest.raises(ValueError, match="line 1"):
            collection_from_exchange(path)

    def test_non_finite_embedding_rejected_with_line(self, tmp_path):
        path = tmp_path / "nan.jsonl"
        path.write_text(
            '{"video_id": "v", "frame_id": "f", "patch_index": 0, '
            '"embedding": [NaN, 1.0], "box": [0, 0, 1, 1]}\n'
        )
        with pytest.raises(ValueError, match="line 1"):
            collection_from_exchange(path)

    def test_non_finite_box_rejected_with_line(self, tmp_path):
        path = tmp_path / "infbox.jsonl"
        path.write_text(
            '{"video_id": "v", "frame_id": "f", "patch_index": 0, '
            '"embedding": [1.0, 0.0], "box": [0, 0, Infinity, 1]}\n'
        )
        with pytest.raises(ValueError, match="line 1"):
            collection_from_exchange(path)

    def test_zero_embedding_dropped_on_load(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            '{"video_id": "v", "frame_id": "f", "patch_index": 0, '
            '"embedding": [0.0, 0.0], "box": [0, 0, 1, 1]}\n'
            '{"video_id": "v", "frame_id": "f", "patch_index": 1, '
            '"embedding": [3.0, 4.0], "box": [0, 0, 1, 1]}\n'
        )
        col = collection_from_exchange(path)
        assert col.stats.dropped == 1
        assert len(col) == 1
        np.testing.assert_allclose(col.records[0].embedding, [0.6, 0.8], atol=1e-7)


class TestFileProvider:
    def test_round_trip_through_provider(self, tmp_path):
        seq = uniform_sequence("v", 2, rows=2, cols=2, patch_size=16)
        col = build_collection(seq, KeyframePolicy.fixed_interval(1), 16, SyntheticProvider(9, dim=16))
        path = tmp_path / "corpus.jsonl"
        write_exchange(col, path)
        rebuilt = build_collection(
            seq, KeyframePolicy.fixed_interval(1), 16, FileProvider(path)
        )
        assert len(rebuilt) == len(col)
        for a, b in zip(col.records, rebuilt.records):
            assert a.identity == b.identity
            np.testing.assert_array_equal(a.embedding, b.embedding)
            assert a.box.as_list() == pytest.approx(b.box.as_list(), abs=1e-4)

    def test_missing_patch_rejected(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            '{"video_id": "v", "frame_id": "f000000", "patch_index": 0, '
            '"embedding": [1.0, 0.0], "box": [0, 0, 1, 1]}\n'
        )
        seq = uniform_sequence("v", 1, rows=1, cols=2, patch_size=16)
        with pytest.raises(ProviderDimensionMismatchError):
            build_collection(seq, KeyframePolicy.fixed_interval(1), 16, FileProvider(path))
