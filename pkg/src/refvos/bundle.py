"""File-backed perception bundles: detections, propagations, embeddings.

A bundle directory stands in for detector/segmenter/embedding models:

    video.json          {"id", "width", "height", "frame_count"}
    detections.json     [{"frame", "key", "category", "score", "box", "mask"}]
    propagations.json   optional [{"frame", "key", "target", "box", "mask"}]
    embeddings.json     optional [{"key", "vector"}]
    frames/%06d.png     optional video frames (needed for camera estimation)

Masks use the compressed-string RLE wire form. Loading validates the
schema, drops detections below the score floor and suppresses same-frame
duplicates by IoU. Loaded bundles are immutable and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import BinaryMask, Box2D, box_centroid, box_iou, round_half_away, translate_mask

DETECTION_SCORE_FLOOR = 0.3
DUPLICATE_IOU = 0.4
FRAME_NAME = "{:06d}.png"


class BundleValidationError(ValueError):
    """Schema violation, carrying the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.field_path = path


@dataclass(frozen=True)
class KeyframeSchedule:
    """Detection frames: multiples of the interval plus the final frame."""

    interval: int
    indices: tuple[int, ...]

    def __contains__(self, frame: int) -> bool:
        return frame in self.indices


def sample_keyframes(frame_count: int, interval: int) -> KeyframeSchedule:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    if interval < 1:
        raise ValueError("interval must be >= 1")
    indices = list(range(0, frame_count, interval))
    if indices[-1] != frame_count - 1:
        indices.append(frame_count - 1)
    return KeyframeSchedule(interval=interval, indices=tuple(indices))


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    instance_key: str
    category: str
    score: float
    box: Box2D
    mask: BinaryMask


@dataclass
class PerceptionBundle:
    """Immutable-after-load perception data for one video."""

    video_id: str
    width: int
    height: int
    frame_count: int
    detections_by_frame: dict[int, tuple[DetectionRecord, ...]]
    propagations: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = field(
        default_factory=dict
    )
    backward_propagations: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = field(
        default_factory=dict
    )
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    frames_dir: Path | None = None
    frames_in_memory: list[np.ndarray] | None = None
    _frame_cache: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def detection_frames(self) -> list[int]:
        return sorted(self.detections_by_frame)

    def detections_at(self, frame: int) -> tuple[DetectionRecord, ...]:
        return self.detections_by_frame.get(frame, ())

    def detection(self, frame: int, key: str) -> DetectionRecord:
        for det in self.detections_at(frame):
            if det.instance_key == key:
                return det
        raise KeyError(f"no detection '{key}' at frame {frame}")

    @property
    def has_frames(self) -> bool:
        return self.frames_in_memory is not None or self.frames_dir is not None

    def frame_image(self, index: int) -> np.ndarray:
        """Frame pixels as (H, W) or (H, W, 3) uint8; cached when file-backed."""
        if not 0 <= index < self.frame_count:
            raise IndexError(f"frame {index} out of range [0, {self.frame_count})")
        if self.frames_in_memory is not None:
            return self.frames_in_memory[index]
        if self.frames_dir is None:
            raise FileNotFoundError(f"bundle '{self.video_id}' has no frames")
        if index not in self._frame_cache:
            path = Path(self.frames_dir) / FRAME_NAME.format(index)
            with Image.open(path) as img:
                self._frame_cache[index] = np.asarray(img.convert("RGB"))
        return self._frame_cache[index]


def _expect(obj: dict, key: str, types, path: str):
    if key not in obj:
        raise BundleValidationError(f"{path}.{key}", "missing field")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise BundleValidationError(f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _parse_box(value, path: str) -> Box2D:
    if not isinstance(value, list) or len(value) != 4:
        raise BundleValidationError(path, "box must be a list of 4 numbers")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise BundleValidationError(path, "box entries must be numbers")
    try:
        return Box2D(*[float(v) for v in value])
    except ValueError as exc:
        raise BundleValidationError(path, str(exc)) from exc


def _parse_mask(value, width: int, height: int, path: str) -> BinaryMask:
    if not isinstance(value, dict) or "size" not in value or "counts" not in value:
        raise BundleValidationError(path, "mask must be {size, counts}")
    try:
        mask = BinaryMask.from_coco(value)
    except (ValueError, TypeError, KeyError) as exc:
        raise BundleValidationError(path, f"bad RLE mask: {exc}") from exc
    if (mask.width, mask.height) != (width, height):
        raise BundleValidationError(
            path, f"mask size {mask.width}x{mask.height} does not match video {width}x{height}"
        )
    return mask


def _parse_detection(obj: dict, width: int, height: int, frame_count: int, path: str) -> DetectionRecord:
    frame = _expect(obj, "frame", int, path)
    if not 0 <= frame < frame_count:
        raise BundleValidationError(f"{path}.frame", f"frame {frame} outside [0, {frame_count})")
    key = _expect(obj, "key", str, path)
    category = _expect(obj, "category", str, path)
    score = float(_expect(obj, "score", (int, float), path))
    if not 0.0 <= score <= 1.0:
        raise BundleValidationError(f"{path}.score", f"score {score} outside [0, 1]")
    box = _parse_box(obj.get("box"), f"{path}.box")
    mask = _parse_mask(obj.get("mask"), width, height, f"{path}.mask")
    mask_box = mask.bounding_box()
    if mask_box is not None:
        if (
            mask_box.xmin < box.xmin - 2
            or mask_box.ymin < box.ymin - 2
            or mask_box.xmax > box.xmax + 2
            or mask_box.ymax > box.ymax + 2
        ):
            raise BundleValidationError(f"{path}.mask", "mask extends beyond box by more than 2 px")
    return DetectionRecord(frame, key, category, score, box, mask)


def _suppress_duplicates(records: list[DetectionRecord]) -> tuple[DetectionRecord, ...]:
    """Keep higher-scoring boxes; drop same-frame boxes overlapping a kept one."""
    order = sorted(range(len(records)), key=lambda i: (-records[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(box_iou(records[i].box, records[j].box) <= DUPLICATE_IOU for j in kept):
            kept.append(i)
    return tuple(records[i] for i in sorted(kept))


def load_bundle(path: str | Path) -> PerceptionBundle:
    """Load and validate a bundle directory.

    Detections with score below the floor are dropped; remaining same-frame
    detections with box IoU above the duplicate threshold are suppressed,
    keeping the higher score. Loading the same directory twice yields equal
    content.
    """
    root = Path(path)
    video_path = root / "video.json"
    detections_path = root / "detections.json"
    if not video_path.is_file():
        raise FileNotFoundError(video_path)
    if not detections_path.is_file():
        raise FileNotFoundError(detections_path)

    meta = json.loads(video_path.read_text())
    if not isinstance(meta, dict):
        raise BundleValidationError("video", "video.json must hold an object")
    video_id = _expect(meta, "id", str, "video")
    width = _expect(meta, "width", int, "video")
    height = _expect(meta, "height", int, "video")
    frame_count = _expect(meta, "frame_count", int, "video")
    if width < 1 or height < 1 or frame_count < 1:
        raise BundleValidationError("video", "dimensions and frame_count must be positive")

    raw_dets = json.loads(detections_path.read_text())
    if not isinstance(raw_dets, list):
        raise BundleValidationError("detections", "detections.json must hold a list")
    by_frame: dict[int, list[DetectionRecord]] = {}
    for i, obj in enumerate(raw_dets):
        if not isinstance(obj, dict):
            raise BundleValidationError(f"detections[{i}]", "expected an object")
        det = _parse_detection(obj, width, height, frame_count, f"detections[{i}]")
        if det.score < DETECTION_SCORE_FLOOR:
            continue
        by_frame.setdefault(det.frame_index, []).append(det)
    detections = {frame: _suppress_duplicates(dets) for frame, dets in by_frame.items()}

    forward: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = {}
    backward: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = {}
    prop_path = root / "propagations.json"
    if prop_path.is_file():
        raw_props = json.loads(prop_path.read_text())
        if not isinstance(raw_props, list):
            raise BundleValidationError("propagations", "propagations.json must hold a list")
        for i, obj in enumerate(raw_props):
            path_i = f"propagations[{i}]"
            if not isinstance(obj, dict):
                raise BundleValidationError(path_i, "expected an object")
            source = _expect(obj, "frame", int, path_i)
            target = _expect(obj, "target", int, path_i)
            key = _expect(obj, "key", str, path_i)
            if target == source:
                raise BundleValidationError(f"{path_i}.target", "target must differ from source")
            box = _parse_box(obj.get("box"), f"{path_i}.box")
            mask = _parse_mask(obj.get("mask"), width, height, f"{path_i}.mask")
            table = forward if target > source else backward
            table[(source, key, target)] = (box, mask)

    embeddings: dict[str, np.ndarray] = {}
    emb_path = root / "embeddings.json"
    if emb_path.is_file():
        raw_emb = json.loads(emb_path.read_text())
        if not isinstance(raw_emb, list):
            raise BundleValidationError("embeddings", "embeddings.json must hold a list")
        for i, obj in enumerate(raw_emb):
            path_i = f"embeddings[{i}]"
            if not isinstance(obj, dict):
                raise BundleValidationError(path_i, "expected an object")
            key = _expect(obj, "key", str, path_i)
            vector = _expect(obj, "vector", list, path_i)
            if not vector or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector
            ):
                raise BundleValidationError(f"{path_i}.vector", "vector must be a non-empty number list")
            embeddings[key] = np.asarray(vector, dtype=np.float64)

    frames_dir = root / "frames"
    return PerceptionBundle(
        video_id=video_id,
        width=width,
        height=height,
        frame_count=frame_count,
        detections_by_frame=detections,
        propagations=forward,
        backward_propagations=backward,
        embeddings=embeddings,
        frames_dir=frames_dir if frames_dir.is_dir() else None,
    )


def write_bundle(path: str | Path, bundle: PerceptionBundle) -> Path:
    """Write a bundle directory in the schema ``load_bundle`` reads."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "video.json").write_text(
        json.dumps(
            {
                "id": bundle.video_id,
                "width": bundle.width,
                "height": bundle.height,
                "frame_count": bundle.frame_count,
            },
            indent=2,
            sort_keys=True,
        )
    )
    dets = []
    for frame in sorted(bundle.detections_by_frame):
        for det in bundle.detections_by_frame[frame]:
            dets.append(
                {
                    "frame": det.frame_index,
                    "key": det.instance_key,
                    "category": det.category,
                    "score": det.score,
                    "box": [det.box.xmin, det.box.ymin, det.box.xmax, det.box.ymax],
                    "mask": det.mask.to_coco(),
                }
            )
    (root / "detections.json").write_text(json.dumps(dets, indent=0, sort_keys=True))

    props = []
    for table in (bundle.propagations, bundle.backward_propagations):
        for (source, key, target), (box, mask) in sorted(table.items()):
            props.append(
                {
                    "frame": source,
                    "key": key,
                    "target": target,
                    "box": [box.xmin, box.ymin, box.xmax, box.ymax],
                    "mask": mask.to_coco(),
                }
            )
    if props:
        (root / "propagations.json").write_text(json.dumps(props, indent=0, sort_keys=True))

    if bundle.embeddings:
        entries = [
            {"key": key, "vector": [float(v) for v in vec]}
            for key, vec in sorted(bundle.embeddings.items())
        ]
        (root / "embeddings.json").write_text(json.dumps(entries, indent=0, sort_keys=True))

    if bundle.frames_in_memory is not None:
        frames_dir = root / "frames"
        frames_dir.mkdir(exist_ok=True)
        for i, frame in enumerate(bundle.frames_in_memory):
            Image.fromarray(frame).save(frames_dir / FRAME_NAME.format(i))
    return root


def instance_velocity(bundle: PerceptionBundle, source_frame: int, key: str) -> tuple[float, float, float, float]:
    """Per-frame box velocity from the latest earlier sighting of the same key.

    Velocity applies to all four box coordinates (allows size change).
    Returns zeros for an instance first seen at ``source_frame``.
    """
    current = bundle.detection(source_frame, key)
    previous = None
    for frame in sorted(bundle.detections_by_frame, reverse=True):
        if frame >= source_frame:
            continue
        for det in bundle.detections_by_frame[frame]:
            if det.instance_key == key:
                previous = det
                break
        if previous is not None:
            break
    if previous is None:
        return (0.0, 0.0, 0.0, 0.0)
    gap = source_frame - previous.frame_index
    b, p = current.box, previous.box
    return (
        (b.xmin - p.xmin) / gap,
        (b.ymin - p.ymin) / gap,
        (b.xmax - p.xmax) / gap,
        (b.ymax - p.ymax) / gap,
    )


def propagate_forward(
    bundle: PerceptionBundle,
    source_frame: int,
    instance: str,
    horizon: int,
    velocity: tuple[float, float, float, float] | None = None,
) -> list[tuple[int, Box2D, BinaryMask]]:
    """Predict (frame, box, mask) for the ``horizon`` frames after the source.

    Bundle-provided propagation entries take precedence per target frame.
    Otherwise the box advances at constant velocity (caller-supplied, else
    inferred from an earlier sighting of the same instance key, else zero)
    and the mask is translated by the rounded centroid delta.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    det = bundle.detection(source_frame, instance)
    vel = velocity if velocity is not None else instance_velocity(bundle, source_frame, instance)
    out: list[tuple[int, Box2D, BinaryMask]] = []
    src_centroid = box_centroid(det.box)
    for step in range(1, horizon + 1):
        target = source_frame + step
        entry = bundle.propagations.get((source_frame, instance, target))
        if entry is not None:
            out.append((target, entry[0], entry[1]))
            continue
        box = Box2D(
            det.box.xmin + vel[0] * step,
            det.box.ymin + vel[1] * step,
            det.box.xmax + vel[2] * step,
            det.box.ymax + vel[3] * step,
        )
        c = box_centroid(box)
        mask = translate_mask(
            det.mask,
            round_half_away(c.x - src_centroid.x),
            round_half_away(c.y - src_centroid.y),
        )
        out.append((target, box, mask))
    return out
