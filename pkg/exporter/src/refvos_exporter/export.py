"""Bundle export: run detection on keyframes, propagate, write the schema.

Writes are atomic: everything lands in a scratch directory that is
self-validated against the bundle schema before being renamed into place.
The score floor and duplicate-suppression threshold the consuming engine
applies at load time are applied here too, so hand-built fixtures and
exported bundles behave identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import (
    DETECTORS,
    EMBEDDERS,
    PROPAGATORS,
    ExporterError,
    RawDetection,
    resolve,
)
from .rle import mask_to_wire, wire_to_mask

SCORE_FLOOR = 0.3
DUPLICATE_IOU = 0.4
VERIFICATION_WINDOW = 3
FRAME_NAME = "{:06d}.png"


@dataclass(frozen=True)
class ExportJob:
    video: Path
    vocabulary: tuple[str, ...]
    keyframe_interval: int
    out_dir: Path
    detector: str = "reference"
    propagator: str = "reference"
    copy_frames: bool = True

    def __post_init__(self) -> None:
        if not self.vocabulary or not all(v.strip() for v in self.vocabulary):
            raise ValueError("vocabulary must hold non-empty terms")
        if self.keyframe_interval < 1:
            raise ValueError("keyframe interval must be >= 1")


def load_video_frames(path: str | Path) -> list[np.ndarray]:
    """Frames from a directory of images or a video file readable by OpenCV."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not files:
            raise ExporterError(f"no image frames under {path}")
        return [np.asarray(Image.open(p).convert("RGB")) for p in files]
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ExporterError("reading video files requires OpenCV; pass a frame directory") from exc
    capture = cv2.VideoCapture(str(path))
    frames = []
    while True:
        ok, frame = capture.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1].copy())
    capture.release()
    if not frames:
        raise ExporterError(f"could not decode any frames from {path}")
    return frames


def keyframe_indices(frame_count: int, interval: int) -> list[int]:
    indices = list(range(0, frame_count, interval))
    if indices[-1] != frame_count - 1:
        indices.append(frame_count - 1)
    return indices


def _box_iou(a, b) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0.0, ix) * max(0.0, iy)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _suppress(detections: list[RawDetection]) -> list[RawDetection]:
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(_box_iou(detections[i].box, detections[j].box) <= DUPLICATE_IOU for j in kept):
            kept.append(i)
    return [detections[i] for i in sorted(kept)]


def _detection_entry(frame: int, key: str, det: RawDetection) -> dict:
    return {
        "frame": frame,
        "key": key,
        "category": det.category,
        "score": det.score,
        "box": list(det.box),
        "mask": mask_to_wire(det.mask),
    }


def _self_validate(root: Path) -> None:
    """Re-read the written files and check the schema invariants."""
    meta = json.loads((root / "video.json").read_text())
    for field_name in ("id", "width", "height", "frame_count"):
        if field_name not in meta:
            raise ExporterError(f"self-validation: video.json missing {field_name}")
    detections = json.loads((root / "detections.json").read_text())
    for i, det in enumerate(detections):
        if det["score"] < SCORE_FLOOR:
            raise ExporterError(f"self-validation: detections[{i}] below score floor")
        mask = wire_to_mask(det["mask"])
        if mask.shape != (meta["height"], meta["width"]):
            raise ExporterError(f"self-validation: detections[{i}] mask size mismatch")
        ys, xs = np.nonzero(mask)
        if xs.size:
            x0, y0, x1, y1 = det["box"]
            if xs.min() < x0 - 2 or ys.min() < y0 - 2 or xs.max() > x1 + 2 or ys.max() > y1 + 2:
                raise ExporterError(f"self-validation: detections[{i}] mask outside box")
        if not 0 <= det["frame"] < meta["frame_count"]:
            raise ExporterError(f"self-validation: detections[{i}] frame out of range")
    prop_path = root / "propagations.json"
    if prop_path.exists():
        for i, prop in enumerate(json.loads(prop_path.read_text())):
            if prop["target"] == prop["frame"]:
                raise ExporterError(f"self-validation: propagations[{i}] self-target")
            wire_to_mask(prop["mask"])


def export_bundle(job: ExportJob) -> Path:
    """Detect on keyframes, propagate over the verification window, write.

    Returns the bundle directory. The write is atomic: a partial scratch
    directory is validated and then renamed to the target.
    """
    frames = load_video_frames(job.video)
    height, width = frames[0].shape[:2]
    indices = keyframe_indices(len(frames), job.keyframe_interval)

    detector = resolve(DETECTORS, job.detector, "detector")(frames)
    propagator = resolve(PROPAGATORS, job.propagator, "propagator")(frames, detector)

    detection_entries: list[dict] = []
    propagation_entries: list[dict] = []
    kept_by_frame: dict[int, list[tuple[str, RawDetection]]] = {}
    for kf in indices:
        raw = detector.detect(frames[kf], job.vocabulary)
        raw = [d for d in raw if d.score >= SCORE_FLOOR]
        kept = _suppress(raw)
        named = [(f"det{kf}_{i}", det) for i, det in enumerate(kept)]
        kept_by_frame[kf] = named
        for key, det in named:
            detection_entries.append(_detection_entry(kf, key, det))

    horizon = job.keyframe_interval + VERIFICATION_WINDOW - 1
    for kf in indices:
        forward = list(range(kf + 1, min(kf + horizon, len(frames) - 1) + 1))
        backward = [t for t in indices if t < kf]
        for key, det in kept_by_frame[kf]:
            hits = propagator.track(det.mask, kf, forward + backward, job.vocabulary)
            for target in sorted(hits):
                hit = hits[target]
                propagation_entries.append(
                    {
                        "frame": kf,
                        "key": key,
                        "target": target,
                        "box": list(hit.box),
                        "mask": mask_to_wire(hit.mask),
                    }
                )

    out = Path(job.out_dir)
    scratch = out.with_name(out.name + ".partial")
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir(parents=True)
    (scratch / "video.json").write_text(
        json.dumps(
            {"id": out.name, "width": width, "height": height, "frame_count": len(frames)},
            indent=2,
            sort_keys=True,
        )
    )
    (scratch / "detections.json").write_text(json.dumps(detection_entries, indent=0, sort_keys=True))
    if propagation_entries:
        (scratch / "propagations.json").write_text(
            json.dumps(propagation_entries, indent=0, sort_keys=True)
        )
    if job.copy_frames:
        frames_dir = scratch / "frames"
        frames_dir.mkdir()
        for i, frame in enumerate(frames):
            Image.fromarray(frame).save(frames_dir / FRAME_NAME.format(i))

    _self_validate(scratch)
    if out.exists():
        shutil.rmtree(out)
    os.replace(scratch, out)
    return out


def text_digest_key(text: str) -> str:
    digest = hashlib.sha1(text.strip().lower().encode("utf-8")).hexdigest()[:16]
    return f"text/{digest}"


def export_embeddings(
    bundle_dir: str | Path,
    crops: list[dict],
    texts: list[str],
    out_path: str | Path | None = None,
    embedder: str = "reference",
) -> Path:
    """Write crop and text embeddings for an existing bundle.

    ``crops`` entries are {"track_id", "frame", "box"}. A crop that cannot
    be extracted produces an entry in the sibling errors file and the
    export continues.
    """
    bundle_dir = Path(bundle_dir)
    meta = json.loads((bundle_dir / "video.json").read_text())
    model = resolve(EMBEDDERS, embedder, "embedder")()
    entries: list[dict] = []
    errors: list[dict] = []
    frame_cache: dict[int, np.ndarray] = {}

    def frame_image(index: int) -> np.ndarray:
        if index not in frame_cache:
            path = bundle_dir / "frames" / FRAME_NAME.format(index)
            if not path.exists():
                raise ExporterError(f"frame {index} not present in bundle")
            frame_cache[index] = np.asarray(Image.open(path).convert("RGB"))
        return frame_cache[index]

    for crop in crops:
        key = f"crop/{crop['track_id']}/{crop['frame']}"
        try:
            frame_idx = int(crop["frame"])
            if not 0 <= frame_idx < meta["frame_count"]:
                raise ExporterError(f"frame {frame_idx} out of range")
            vec = model.embed_crop(frame_image(frame_idx), tuple(crop["box"]))
            entries.append({"key": key, "vector": [float(v) for v in vec]})
        except ExporterError as exc:
            errors.append({"key": key, "error": str(exc)})
    for text in texts:
        vec = model.embed_text(text)
        entries.append({"key": text_digest_key(text), "vector": [float(v) for v in vec]})

    out = Path(out_path) if out_path else bundle_dir / "embeddings.json"
    tmp = out.with_suffix(".partial")
    tmp.write_text(json.dumps(sorted(entries, key=lambda e: e["key"]), indent=0, sort_keys=True))
    os.replace(tmp, out)
    if errors:
        out.with_name(out.stem + "_errors.json").write_text(json.dumps(errors, indent=0, sort_keys=True))
    return out
