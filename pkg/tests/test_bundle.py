from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refvos.bundle import (
    BundleValidationError,
    PerceptionBundle,
    load_bundle,
    propagate_forward,
    sample_keyframes,
    write_bundle,
)
from refvos.geometry import BinaryMask, Box2D, box_centroid

from conftest import block_detection, block_mask


class TestSampleKeyframes:
    def test_single_frame(self):
        assert sample_keyframes(1, 15).indices == (0,)

    def test_exact_multiple_plus_last(self):
        assert sample_keyframes(31, 15).indices == (0, 15, 30)

    def test_last_frame_appended(self):
        assert sample_keyframes(40, 15).indices == (0, 15, 30, 39)

    @settings(max_examples=80)
    @given(st.integers(1, 500), st.integers(1, 60))
    def test_covers_ends_with_bounded_gaps(self, frame_count, interval):
        sched = sample_keyframes(frame_count, interval)
        assert sched.indices[0] == 0
        assert sched.indices[-1] == frame_count - 1
        assert all(b - a <= interval for a, b in zip(sched.indices[:-1], sched.indices[1:]))
        assert list(sched.indices) == sorted(set(sched.indices))


def write_minimal_bundle(root, detections, width=64, height=48, frame_count=20, extra=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "video.json").write_text(
        json.dumps({"id": "vid", "width": width, "height": height, "frame_count": frame_count})
    )
    (root / "detections.json").write_text(json.dumps(detections))
    if extra:
        for name, doc in extra.items():
            (root / name).write_text(json.dumps(doc))


def det_json(frame, key, x0, y0, x1, y1, score=0.9, category="cat", width=64, height=48):
    return {
        "frame": frame,
        "key": key,
        "category": category,
        "score": score,
        "box": [x0, y0, x1, y1],
        "mask": block_mask(width, height, x0, y0, x1, y1).to_coco(),
    }


class TestLoadBundle:
    def test_score_floor_drops_weak_detections(self, tmp_path):
        write_minimal_bundle(
            tmp_path / "b",
            [det_json(0, "a", 1, 1, 5, 5, score=0.25), det_json(0, "b", 10, 10, 15, 15, score=0.31)],
        )
        bundle = load_bundle(tmp_path / "b")
        keys = [d.instance_key for d in bundle.detections_at(0)]
        assert keys == ["b"]

    def test_duplicate_suppression_keeps_higher_score(self, tmp_path):
        write_minimal_bundle(
            tmp_path / "b",
            [
                det_json(0, "lo", 10, 10, 20, 20, score=0.8),
                det_json(0, "hi", 11, 10, 21, 20, score=0.9),  # IoU ~ 0.68 with "lo"
                det_json(0, "far", 40, 30, 50, 40, score=0.5),
            ],
        )
        bundle = load_bundle(tmp_path / "b")
        keys = sorted(d.instance_key for d in bundle.detections_at(0))
        assert keys == ["far", "hi"]

    def test_empty_detections_ok(self, tmp_path):
        write_minimal_bundle(tmp_path / "b", [])
        bundle = load_bundle(tmp_path / "b")
        assert bundle.detection_frames() == []

    def test_missing_files_raise_io_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_bundle(tmp_path / "nope")

    def test_schema_violation_names_field(self, tmp_path):
        write_minimal_bundle(tmp_path / "b", [det_json(0, "a", 1, 1, 5, 5, score=1.7)])
        with pytest.raises(BundleValidationError) as err:
            load_bundle(tmp_path / "b")
        assert err.value.field_path == "detections[0].score"

    def test_mask_outside_box_rejected(self, tmp_path):
        bad = det_json(0, "a", 1, 1, 5, 5)
        bad["mask"] = block_mask(64, 48, 1, 1, 12, 12).to_coco()
        write_minimal_bundle(tmp_path / "b", [bad])
        with pytest.raises(BundleValidationError) as err:
            load_bundle(tmp_path / "b")
        assert "mask" in err.value.field_path

    def test_frame_out_of_range_rejected(self, tmp_path):
        write_minimal_bundle(tmp_path / "b", [det_json(25, "a", 1, 1, 5, 5)])
        with pytest.raises(BundleValidationError) as err:
            load_bundle(tmp_path / "b")
        assert err.value.field_path == "detections[0].frame"

    def test_load_is_idempotent(self, tmp_path):
        write_minimal_bundle(
            tmp_path / "b",
            [det_json(0, "a", 1, 1, 5, 5), det_json(15, "a", 3, 1, 7, 5)],
            extra={
                "propagations.json": [
                    {
                        "frame": 0,
                        "key": "a",
                        "target": 1,
                        "box": [1, 1, 5, 5],
                        "mask": block_mask(64, 48, 1, 1, 5, 5).to_coco(),
                    }
                ],
                "embeddings.json": [{"key": "text/abc", "vector": [0.5, -0.25]}],
            },
        )
        b1 = load_bundle(tmp_path / "b")
        b2 = load_bundle(tmp_path / "b")
        assert b1.detections_by_frame == b2.detections_by_frame
        assert b1.propagations == b2.propagations
        assert {k: v.tolist() for k, v in b1.embeddings.items()} == {
            k: v.tolist() for k, v in b2.embeddings.items()
        }

    def test_propagations_split_by_direction(self, tmp_path):
        mask = block_mask(64, 48, 1, 1, 5, 5).to_coco()
        write_minimal_bundle(
            tmp_path / "b",
            [det_json(15, "a", 1, 1, 5, 5)],
            extra={
                "propagations.json": [
                    {"frame": 15, "key": "a", "target": 16, "box": [1, 1, 5, 5], "mask": mask},
                    {"frame": 15, "key": "a", "target": 0, "box": [1, 1, 5, 5], "mask": mask},
                ]
            },
        )
        bundle = load_bundle(tmp_path / "b")
        assert (15, "a", 16) in bundle.propagations
        assert (15, "a", 0) in bundle.backward_propagations

    def test_write_then_load_roundtrip(self, tmp_path):
        det = block_detection(0, "a", 2, 2, 8, 8, width=64, height=48)
        bundle = PerceptionBundle(
            video_id="vid",
            width=64,
            height=48,
            frame_count=5,
            detections_by_frame={0: (det,)},
            embeddings={"text/x": np.array([1.0, 2.0])},
        )
        write_bundle(tmp_path / "out", bundle)
        loaded = load_bundle(tmp_path / "out")
        assert loaded.detections_by_frame[0] == (det,)
        assert loaded.embeddings["text/x"].tolist() == [1.0, 2.0]


class TestPropagateForward:
    def make_bundle(self, *dets, props=None, width=300, height=80, frame_count=40):
        by_frame = {}
        for d in dets:
            by_frame.setdefault(d.frame_index, []).append(d)
        return PerceptionBundle(
            video_id="v",
            width=width,
            height=height,
            frame_count=frame_count,
            detections_by_frame={k: tuple(v) for k, v in by_frame.items()},
            propagations=props or {},
        )

    def test_static_instance_repeats(self):
        d = block_detection(0, "a", 10, 10, 20, 20, width=300, height=80)
        bundle = self.make_bundle(d)
        out = propagate_forward(bundle, 0, "a", horizon=3)
        assert [frame for frame, _, _ in out] == [1, 2, 3]
        for _, box, mask in out:
            assert box == d.box
            assert mask == d.mask

    def test_constant_velocity_from_history(self):
        d0 = block_detection(0, "a", 10, 10, 20, 20, width=300, height=80)
        d15 = block_detection(15, "a", 160, 10, 170, 20, width=300, height=80)
        bundle = self.make_bundle(d0, d15)
        out = propagate_forward(bundle, 15, "a", horizon=2)
        assert out[0][1].xmin == pytest.approx(170.0)
        assert out[1][1].xmin == pytest.approx(180.0)
        c0 = box_centroid(out[0][1])
        assert box_centroid(d15.box).x + 10 == pytest.approx(c0.x)

    def test_bundle_entries_take_precedence(self):
        d = block_detection(0, "a", 10, 10, 20, 20, width=300, height=80)
        override = (Box2D(50, 50, 60, 60), BinaryMask.empty(300, 80))
        bundle = self.make_bundle(d, props={(0, "a", 1): override})
        out = propagate_forward(bundle, 0, "a", horizon=2)
        assert out[0][1] == override[0]
        assert out[1][1] == d.box  # second step falls back to constant velocity

    def test_unknown_instance_raises(self):
        d = block_detection(0, "a", 10, 10, 20, 20, width=300, height=80)
        bundle = self.make_bundle(d)
        with pytest.raises(KeyError):
            propagate_forward(bundle, 0, "zzz", horizon=1)

    def test_explicit_velocity_overrides_inference(self):
        d = block_detection(0, "a", 10, 10, 20, 20, width=300, height=80)
        bundle = self.make_bundle(d)
        out = propagate_forward(bundle, 0, "a", horizon=1, velocity=(2.0, 0.0, 2.0, 0.0))
        assert out[0][1].xmin == pytest.approx(12.0)

    def test_stationary_fallback_zero_centroid_drift(self):
        d = block_detection(0, "a", 30, 30, 44, 44, width=300, height=80)
        bundle = self.make_bundle(d)
        out = propagate_forward(bundle, 0, "a", horizon=5)
        for _, box, _ in out:
            assert box_centroid(box) == box_centroid(d.box)
