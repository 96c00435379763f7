from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from refvos_exporter.backends import (
    DETECTORS,
    ExporterError,
    RawDetection,
    ReferenceEmbedder,
    resolve,
)
from refvos_exporter.export import (
    ExportJob,
    export_bundle,
    export_embeddings,
    keyframe_indices,
    text_digest_key,
)
from refvos_exporter.rle import mask_to_wire, wire_to_mask


def make_sample_video(root: Path, frame_count=31, width=96, height=72) -> Path:
    """A bright square gliding right over a dark noisy background."""
    rng = np.random.default_rng(99)
    background = rng.integers(30, 55, size=(height, width, 3), dtype=np.uint8)
    video_dir = root / "video"
    video_dir.mkdir(parents=True, exist_ok=True)
    for t in range(frame_count):
        frame = background.copy()
        x = 10 + 2 * t
        frame[24:44, x : x + 20] = (205, 200, 70)
        Image.fromarray(frame).save(video_dir / f"{t:06d}.png")
    return video_dir


@pytest.fixture(scope="module")
def sample_video(tmp_path_factory):
    return make_sample_video(tmp_path_factory.mktemp("vid"))


@pytest.fixture(scope="module")
def exported_bundle(sample_video, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundles") / "sample"
    job = ExportJob(
        video=sample_video,
        vocabulary=("square",),
        keyframe_interval=15,
        out_dir=out,
    )
    return export_bundle(job)


class TestExportBundle:
    def test_detections_only_at_keyframes(self, exported_bundle):
        detections = json.loads((exported_bundle / "detections.json").read_text())
        frames = sorted({d["frame"] for d in detections})
        assert frames == [0, 15, 30]

    def test_all_scores_above_floor(self, exported_bundle):
        detections = json.loads((exported_bundle / "detections.json").read_text())
        assert detections
        assert all(d["score"] >= 0.3 for d in detections)

    def test_masks_decode_to_video_size(self, exported_bundle):
        detections = json.loads((exported_bundle / "detections.json").read_text())
        meta = json.loads((exported_bundle / "video.json").read_text())
        for det in detections:
            mask = wire_to_mask(det["mask"])
            assert mask.shape == (meta["height"], meta["width"])

    def test_propagations_cover_association_window(self, exported_bundle):
        props = json.loads((exported_bundle / "propagations.json").read_text())
        targets = {p["target"] for p in props if p["frame"] == 0}
        assert {15, 16, 17}.issubset(targets)
        backward = [p for p in props if p["target"] < p["frame"]]
        assert backward

    def test_frames_copied(self, exported_bundle):
        assert (exported_bundle / "frames" / "000000.png").exists()

    def test_unknown_model_identifier_rejected(self, sample_video, tmp_path):
        job = ExportJob(
            video=sample_video,
            vocabulary=("square",),
            keyframe_interval=15,
            out_dir=tmp_path / "b",
            detector="grounding-dino-t",
        )
        with pytest.raises(ExporterError, match="grounding-dino-t"):
            export_bundle(job)

    def test_low_score_detections_absent_from_file(self, sample_video, tmp_path):
        class StubDetector:
            def __init__(self, frames):
                self._shape = frames[0].shape[:2]

            def detect(self, frame, vocabulary):
                mask_hi = np.zeros(self._shape, bool)
                mask_hi[5:15, 5:15] = True
                mask_lo = np.zeros(self._shape, bool)
                mask_lo[30:40, 50:60] = True
                return [
                    RawDetection(vocabulary[0], 0.8, (5.0, 5.0, 14.0, 14.0), mask_hi),
                    RawDetection(vocabulary[0], 0.25, (50.0, 30.0, 59.0, 39.0), mask_lo),
                ]

        DETECTORS["stub"] = StubDetector
        try:
            job = ExportJob(
                video=sample_video,
                vocabulary=("square",),
                keyframe_interval=15,
                out_dir=tmp_path / "stub",
                detector="stub",
            )
            out = export_bundle(job)
        finally:
            del DETECTORS["stub"]
        detections = json.loads((out / "detections.json").read_text())
        scores = sorted({d["score"] for d in detections})
        assert scores == [0.8]


class TestPrimaryContract:
    def test_bundle_passes_primary_validation(self, exported_bundle):
        # shared contract check, executed with the consuming engine's validator
        from refvos.bundle import load_bundle

        bundle = load_bundle(exported_bundle)
        assert bundle.detection_frames() == [0, 15, 30]
        assert bundle.propagations

    def test_pipeline_runs_end_to_end(self, exported_bundle, tmp_path):
        run_dir = tmp_path / "run"
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "refvos.cli",
                "run",
                "--bundle",
                str(exported_bundle),
                "--query",
                "the square moving right",
                "--out",
                str(run_dir),
                "--offline",
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads((run_dir / "results.json").read_text())
        assert doc["zero_candidates"] is False
        assert doc["selected_ids"]
        assert any(m["counts"] != f"{96 * 72}" for m in doc["masks"])


class TestExportEmbeddings:
    def test_crop_embeddings_deterministic(self, exported_bundle, tmp_path):
        crops = [{"track_id": 0, "frame": 0, "box": [10, 24, 29, 43]}]
        out_a = export_embeddings(exported_bundle, crops, ["standing"], out_path=tmp_path / "a.json")
        out_b = export_embeddings(exported_bundle, crops, ["standing"], out_path=tmp_path / "b.json")
        assert out_a.read_text() == out_b.read_text()

    def test_text_key_matches_consumer_convention(self):
        import hashlib

        digest = hashlib.sha1("standing".encode()).hexdigest()[:16]
        assert text_digest_key(" Standing ") == f"text/{digest}"

    def test_missing_crop_produces_error_entry_and_continues(self, exported_bundle, tmp_path):
        crops = [
            {"track_id": 0, "frame": 0, "box": [10, 24, 29, 43]},
            {"track_id": 1, "frame": 999, "box": [0, 0, 5, 5]},
        ]
        out = export_embeddings(exported_bundle, crops, [], out_path=tmp_path / "e.json")
        entries = json.loads(out.read_text())
        assert [e["key"] for e in entries] == ["crop/0/0"]
        errors = json.loads((tmp_path / "e_errors.json").read_text())
        assert errors[0]["key"] == "crop/1/999"

    def test_vectors_accepted_by_primary_loader(self, exported_bundle):
        crops = [{"track_id": 0, "frame": 0, "box": [10, 24, 29, 43]}]
        export_embeddings(exported_bundle, crops, ["standing"])
        from refvos.bundle import load_bundle

        bundle = load_bundle(exported_bundle)
        assert "crop/0/0" in bundle.embeddings
        assert text_digest_key("standing") in bundle.embeddings

    def test_embedder_text_unit_norm(self):
        model = ReferenceEmbedder()
        vec = model.embed_text("sitting")
        assert np.linalg.norm(vec) == pytest.approx(1.0)


class TestHelpers:
    def test_keyframe_indices_match_schedule_rule(self):
        assert keyframe_indices(31, 15) == [0, 15, 30]
        assert keyframe_indices(40, 15) == [0, 15, 30, 39]
        assert keyframe_indices(1, 15) == [0]

    def test_rle_roundtrip(self):
        rng = np.random.default_rng(3)
        arr = rng.uniform(size=(9, 7)) > 0.5
        assert np.array_equal(wire_to_mask(mask_to_wire(arr)), arr)

    def test_resolve_reports_known_backends(self):
        with pytest.raises(ExporterError, match="reference"):
            resolve({"reference": object}, "sam2-vit-l", "propagator")
