"""Synthetic scenes with scripted motion, camera pan and known ground truth.

Scenes render textured shapes over a textured background (texture is what
makes feature tracking possible), move them along waypoints in world
coordinates, and view them through a scripted camera affine. The output is
a perception bundle whose detections are the ground-truth visible masks at
keyframes, plus forward/backward propagation entries, optional embedding
fixtures for posture queries, and the full ground truth for scoring.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .bundle import (
    DetectionRecord,
    PerceptionBundle,
    sample_keyframes,
    write_bundle,
)
from .flow import AffineTransform
from .geometry import BinaryMask, Box2D, MaskSequence, translate_mask, union_masks
from .pose import crop_key, text_key
from .query import StructuredQuery

MIN_VISIBLE_PIXELS = 9
EMBEDDING_DIM = 16
PROPAGATION_WINDOW = 3

NUMBER_TO_WORD = {2: "two", 3: "three", 4: "four", 5: "five"}


def stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class ObjectScript:
    """One scripted shape: category, geometry, depth layer and waypoints."""

    category: str
    shape: str  # "rect" | "ellipse"
    size: tuple[float, float]
    layer: int
    waypoints: tuple[tuple[int, float, float], ...]  # (frame, world x, world y)
    color: tuple[int, int, int] = (160, 90, 70)

    def position(self, frame: int) -> tuple[float, float]:
        pts = self.waypoints
        if frame <= pts[0][0]:
            return (pts[0][1], pts[0][2])
        if frame >= pts[-1][0]:
            return (pts[-1][1], pts[-1][2])
        for (f0, x0, y0), (f1, x1, y1) in zip(pts[:-1], pts[1:]):
            if f0 <= frame <= f1:
                a = (frame - f0) / (f1 - f0)
                return (x0 + a * (x1 - x0), y0 + a * (y1 - y0))
        return (pts[-1][1], pts[-1][2])


@dataclass(frozen=True)
class CameraScript:
    """Viewpoint motion: constant pan velocity and/or zoom about the centre."""

    pan: tuple[float, float] = (0.0, 0.0)
    zoom_rate: float = 0.0

    def transform(self, frame: int, width: int, height: int) -> AffineTransform:
        ox, oy = self.pan[0] * frame, self.pan[1] * frame
        shift = AffineTransform.translation(-ox, -oy)
        if self.zoom_rate == 0.0:
            return shift
        s = (1.0 + self.zoom_rate) ** frame
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        zoom = AffineTransform(((s, 0.0, cx * (1 - s)), (0.0, s, cy * (1 - s))))
        return zoom.compose(shift)


@dataclass(frozen=True)
class ExpressionTemplate:
    """Fields a referring expression is assembled from."""

    entity: str
    target_indices: tuple[int, ...]
    motion: str = ""
    posture: str = ""
    color: str = ""
    context_entity: str = ""
    context_preposition: str = "by"
    count: int = 1


@dataclass(frozen=True)
class SceneSpec:
    name: str
    width: int
    height: int
    frame_count: int
    objects: tuple[ObjectScript, ...]
    expression: ExpressionTemplate
    camera: CameraScript = CameraScript()
    keyframe_interval: int = 15
    jitter_sigma: float = 0.0
    dropout: float = 0.0
    emit_propagations: bool = True
    emit_embeddings: bool = True

    def __post_init__(self) -> None:
        layers = [o.layer for o in self.objects]
        if len(set(layers)) != len(layers):
            raise ValueError("object depth layers must be unique")
        for idx in self.expression.target_indices:
            if not 0 <= idx < len(self.objects):
                raise ValueError(f"target index {idx} out of range")


class Scenario(NamedTuple):
    name: str
    spec: SceneSpec
    seed: int


@dataclass
class GroundTruth:
    """Everything the pipeline should recover, straight from the script."""

    visible_masks: list[list[BinaryMask]]  # [object][frame]
    keyframe_boxes: list[dict[int, Box2D]]  # [object][keyframe] visible bbox
    camera: list[AffineTransform]  # world -> frame, per frame
    occlusion_order: list[list[tuple[int, int]]]  # per frame (front, back) object indices
    target_masks: MaskSequence
    target_object_indices: tuple[int, ...]
    expected_track_ids: tuple[int, ...]
    has_pan: bool
    has_occlusion: bool


def scripted_expression(spec: SceneSpec) -> tuple[str, StructuredQuery]:
    """Surface text plus the exact structured query the heuristic must yield."""
    tmpl = spec.expression
    parts = []
    if tmpl.count == 1:
        parts.append("the")
    else:
        parts.append(NUMBER_TO_WORD.get(tmpl.count, str(tmpl.count)))
    entity_surface = tmpl.entity + ("s" if tmpl.count > 1 else "")
    if tmpl.color:
        parts.append(tmpl.color)
    parts.append(entity_surface)
    if tmpl.posture:
        parts.append(tmpl.posture)
    if tmpl.motion:
        parts.append(tmpl.motion)
    if tmpl.context_entity:
        parts.append(f"{tmpl.context_preposition} the {tmpl.context_entity}")
    text = " ".join(parts)
    posture = f"{tmpl.color} {tmpl.posture}".strip()
    expected = StructuredQuery(
        candidates=(entity_surface,),
        context=(tmpl.context_entity,) if tmpl.context_entity else (),
        motion=tmpl.motion,
        posture=posture,
        count=tmpl.count,
        raw_query=text,
    )
    return text, expected


def _value_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth texture with fine detail so every window has gradients."""
    coarse_h, coarse_w = height // 8 + 2, width // 8 + 2
    coarse = rng.uniform(50, 205, size=(coarse_h, coarse_w))
    ys = np.linspace(0, coarse_h - 1.001, height)
    xs = np.linspace(0, coarse_w - 1.001, width)
    y0 = np.floor(ys).astype(int)[:, None]
    x0 = np.floor(xs).astype(int)[None, :]
    wy = (ys[:, None] - y0).astype(float)
    wx = (xs[None, :] - x0).astype(float)
    smooth = (
        coarse[y0, x0] * (1 - wy) * (1 - wx)
        + coarse[y0, x0 + 1] * (1 - wy) * wx
        + coarse[y0 + 1, x0] * wy * (1 - wx)
        + coarse[y0 + 1, x0 + 1] * wy * wx
    )
    fine = rng.uniform(-12, 12, size=(height, width))
    return np.clip(smooth + fine, 0, 255)


def _bilinear_sample(canvas: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = canvas.shape
    ys = np.clip(ys, 0.0, h - 1.001)
    xs = np.clip(xs, 0.0, w - 1.001)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = ys - y0
    wx = xs - x0
    return (
        canvas[y0, x0] * (1 - wy) * (1 - wx)
        + canvas[y0, x0 + 1] * (1 - wy) * wx
        + canvas[y0 + 1, x0] * wy * (1 - wx)
        + canvas[y0 + 1, x0 + 1] * wy * wx
    )


def _world_bounds(spec: SceneSpec) -> tuple[float, float, float, float]:
    xs: list[float] = []
    ys: list[float] = []
    corners = [
        (0.0, 0.0),
        (spec.width - 1.0, 0.0),
        (0.0, spec.height - 1.0),
        (spec.width - 1.0, spec.height - 1.0),
    ]
    for t in range(spec.frame_count):
        inv = spec.camera.transform(t, spec.width, spec.height).inverse()
        for cx, cy in corners:
            x, y = inv.apply(cx, cy)
            xs.append(x)
            ys.append(y)
    return (min(xs) - 8, min(ys) - 8, max(xs) + 8, max(ys) + 8)


def _expected_track_ids(spec: SceneSpec, schedule, visibility: list[list[int]]) -> tuple[int, ...]:
    """Track ids the builder will assign: order of first visible keyframe."""
    first_seen = []
    for obj_idx in range(len(spec.objects)):
        frames = [
            kf
            for kf_pos, kf in enumerate(schedule.indices)
            if visibility[obj_idx][kf_pos] >= MIN_VISIBLE_PIXELS
        ]
        first_seen.append((frames[0] if frames else math.inf, obj_idx))
    order = sorted(range(len(first_seen)), key=lambda i: first_seen[i])
    ids = [0] * len(spec.objects)
    next_id = 0
    for obj_idx in order:
        if first_seen[obj_idx][0] == math.inf:
            ids[obj_idx] = -1
        else:
            ids[obj_idx] = next_id
            next_id += 1
    return tuple(ids)


def generate_scene(
    spec: SceneSpec, seed: int
) -> tuple[list[np.ndarray], PerceptionBundle, GroundTruth, str]:
    """Render the scene and derive its bundle, ground truth and query text.

    Deterministic in (spec, seed): identical inputs give byte-identical
    frames and bundle content.
    """
    ss = np.random.SeedSequence(stable_seed(seed, spec.name))
    rng_bg, rng_obj, rng_perturb, rng_emb = [
        np.random.default_rng(child) for child in ss.spawn(4)
    ]
    w, h, t_count = spec.width, spec.height, spec.frame_count

    wx0, wy0, wx1, wy1 = _world_bounds(spec)
    bg_canvas = _value_noise(rng_bg, int(math.ceil(wy1 - wy0)) + 2, int(math.ceil(wx1 - wx0)) + 2)

    object_textures = []
    for obj in spec.objects:
        ow, oh = int(math.ceil(obj.size[0])) + 4, int(math.ceil(obj.size[1])) + 4
        object_textures.append(_value_noise(rng_obj, oh, ow) / 255.0)

    xs_grid, ys_grid = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    frames: list[np.ndarray] = []
    cameras: list[AffineTransform] = []
    full_masks: list[list[np.ndarray]] = [[] for _ in spec.objects]
    visible_masks: list[list[BinaryMask]] = [[] for _ in spec.objects]
    occlusion_order: list[list[tuple[int, int]]] = []

    order_back_to_front = sorted(range(len(spec.objects)), key=lambda i: spec.objects[i].layer)
    for t in range(t_count):
        cam = spec.camera.transform(t, w, h)
        cameras.append(cam)
        inv = cam.inverse()
        (a, b, tx), (c, d, ty) = inv.coefficients
        world_x = a * xs_grid + b * ys_grid + tx
        world_y = c * xs_grid + d * ys_grid + ty
        frame_gray = _bilinear_sample(bg_canvas, world_y - wy0, world_x - wx0)
        frame = np.repeat(frame_gray[:, :, None], 3, axis=2)

        insides: list[np.ndarray] = []
        for idx, obj in enumerate(spec.objects):
            px, py = obj.position(t)
            lx = world_x - px
            ly = world_y - py
            hw, hh = obj.size[0] / 2.0, obj.size[1] / 2.0
            if obj.shape == "ellipse":
                inside = (lx / hw) ** 2 + (ly / hh) ** 2 <= 1.0
            else:
                inside = (np.abs(lx) <= hw) & (np.abs(ly) <= hh)
            insides.append(inside)
            full_masks[idx].append(inside)

        for idx in order_back_to_front:
            obj = spec.objects[idx]
            inside = insides[idx]
            if not inside.any():
                continue
            px, py = obj.position(t)
            tex = _bilinear_sample(
                object_textures[idx],
                (world_y - py) + obj.size[1] / 2.0 + 2.0,
                (world_x - px) + obj.size[0] / 2.0 + 2.0,
            )
            shade = 0.6 + 0.4 * tex[inside]
            for ch in range(3):
                frame[:, :, ch][inside] = obj.color[ch] * shade
        frames.append(np.clip(frame, 0, 255).astype(np.uint8))

        events: list[tuple[int, int]] = []
        layers = {i: spec.objects[i].layer for i in range(len(spec.objects))}
        for i in range(len(spec.objects)):
            for j in range(i + 1, len(spec.objects)):
                if np.logical_and(insides[i], insides[j]).any():
                    front, back = (i, j) if layers[i] > layers[j] else (j, i)
                    events.append((front, back))
        occlusion_order.append(events)

        for idx in range(len(spec.objects)):
            covered = np.zeros((h, w), dtype=bool)
            for other in range(len(spec.objects)):
                if spec.objects[other].layer > spec.objects[idx].layer:
                    covered |= insides[other]
            visible = insides[idx] & ~covered
            visible_masks[idx].append(BinaryMask.from_array(visible))

    schedule = sample_keyframes(t_count, spec.keyframe_interval)
    visibility_counts = [
        [visible_masks[i][kf].count for kf in schedule.indices] for i in range(len(spec.objects))
    ]

    detections: dict[int, list[DetectionRecord]] = {}
    keyframe_boxes: list[dict[int, Box2D]] = [dict() for _ in spec.objects]
    for kf in schedule.indices:
        records = []
        for idx, obj in enumerate(spec.objects):
            visible = visible_masks[idx][kf]
            box = visible.bounding_box()
            if box is not None:
                keyframe_boxes[idx][kf] = box
            if visible.count < MIN_VISIBLE_PIXELS:
                continue
            if spec.dropout > 0 and rng_perturb.uniform() < spec.dropout:
                continue
            mask = visible
            if spec.jitter_sigma > 0:
                dx = int(round(rng_perturb.normal(0, spec.jitter_sigma)))
                dy = int(round(rng_perturb.normal(0, spec.jitter_sigma)))
                if dx or dy:
                    mask = translate_mask(visible, dx, dy)
                    if mask.is_empty:
                        mask, dx, dy = visible, 0, 0
                    box = box.translate(dx, dy)
            records.append(
                DetectionRecord(
                    frame_index=kf,
                    instance_key=f"obj{idx}",
                    category=obj.category,
                    score=round(0.95 - 0.001 * idx, 3),
                    box=box,
                    mask=mask,
                )
            )
        if records:
            detections[kf] = records

    def analytic_box(idx: int, t: int) -> Box2D:
        obj = spec.objects[idx]
        px, py = obj.position(t)
        hw, hh = obj.size[0] / 2.0, obj.size[1] / 2.0
        cam = cameras[t]
        xs, ys = [], []
        for cx, cy in ((px - hw, py - hh), (px + hw, py - hh), (px - hw, py + hh), (px + hw, py + hh)):
            x, y = cam.apply(cx, cy)
            xs.append(x)
            ys.append(y)
        return Box2D.from_points(xs, ys)

    forward: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = {}
    backward: dict[tuple[int, str, int], tuple[Box2D, BinaryMask]] = {}
    if spec.emit_propagations:
        horizon = spec.keyframe_interval + PROPAGATION_WINDOW - 1
        for kf in schedule.indices:
            for det in detections.get(kf, []):
                idx = int(det.instance_key[3:])
                for target in range(kf + 1, min(kf + horizon, t_count - 1) + 1):
                    visible = visible_masks[idx][target]
                    box = visible.bounding_box() or analytic_box(idx, target)
                    forward[(kf, det.instance_key, target)] = (box, visible)
                for target in schedule.indices:
                    if target >= kf:
                        continue
                    visible = visible_masks[idx][target]
                    box = visible.bounding_box() or analytic_box(idx, target)
                    backward[(kf, det.instance_key, target)] = (box, visible)

    expected_ids = _expected_track_ids(spec, schedule, visibility_counts)

    embeddings: dict[str, np.ndarray] = {}
    tmpl = spec.expression
    posture_text = f"{tmpl.color} {tmpl.posture}".strip()
    if spec.emit_embeddings and posture_text:
        anchor = rng_emb.normal(size=EMBEDDING_DIM)
        anchor /= np.linalg.norm(anchor)
        embeddings[text_key(posture_text)] = anchor
        for idx in range(len(spec.objects)):
            track_id = expected_ids[idx]
            if track_id < 0:
                continue
            if idx in tmpl.target_indices:
                base = anchor
            else:
                raw = rng_emb.normal(size=EMBEDDING_DIM)
                raw -= np.dot(raw, anchor) * anchor
                base = raw / np.linalg.norm(raw)
            for kf in schedule.indices:
                vec = base + 0.15 * rng_emb.normal(size=EMBEDDING_DIM)
                embeddings[crop_key(track_id, kf)] = vec / np.linalg.norm(vec)

    query_text, _ = scripted_expression(spec)
    bundle = PerceptionBundle(
        video_id=spec.name,
        width=w,
        height=h,
        frame_count=t_count,
        detections_by_frame={kf: tuple(dets) for kf, dets in detections.items()},
        propagations=forward,
        backward_propagations=backward,
        embeddings=embeddings,
        frames_in_memory=frames,
    )
    target_frames = []
    for t in range(t_count):
        target_frames.append(
            union_masks([visible_masks[i][t] for i in tmpl.target_indices], w, h)
        )
    ground_truth = GroundTruth(
        visible_masks=visible_masks,
        keyframe_boxes=keyframe_boxes,
        camera=cameras,
        occlusion_order=occlusion_order,
        target_masks=MaskSequence(video_id=spec.name, frames=tuple(target_frames)),
        target_object_indices=tmpl.target_indices,
        expected_track_ids=tuple(expected_ids[i] for i in tmpl.target_indices),
        has_pan=spec.camera.pan != (0.0, 0.0),
        has_occlusion=any(occlusion_order),
    )
    return frames, bundle, ground_truth, query_text


# --- scene spec (de)serialisation -------------------------------------------


def scene_spec_to_dict(spec: SceneSpec) -> dict:
    data = asdict(spec)
    return data


def scene_spec_from_dict(data: dict) -> SceneSpec:
    objects = tuple(
        ObjectScript(
            category=o["category"],
            shape=o["shape"],
            size=tuple(o["size"]),
            layer=o["layer"],
            waypoints=tuple(tuple(wp) for wp in o["waypoints"]),
            color=tuple(o.get("color", (160, 90, 70))),
        )
        for o in data["objects"]
    )
    expr = data["expression"]
    expression = ExpressionTemplate(
        entity=expr["entity"],
        target_indices=tuple(expr["target_indices"]),
        motion=expr.get("motion", ""),
        posture=expr.get("posture", ""),
        color=expr.get("color", ""),
        context_entity=expr.get("context_entity", ""),
        context_preposition=expr.get("context_preposition", "by"),
        count=expr.get("count", 1),
    )
    cam = data.get("camera", {})
    camera = CameraScript(
        pan=tuple(cam.get("pan", (0.0, 0.0))), zoom_rate=cam.get("zoom_rate", 0.0)
    )
    return SceneSpec(
        name=data["name"],
        width=data["width"],
        height=data["height"],
        frame_count=data["frame_count"],
        objects=objects,
        expression=expression,
        camera=camera,
        keyframe_interval=data.get("keyframe_interval", 15),
        jitter_sigma=data.get("jitter_sigma", 0.0),
        dropout=data.get("dropout", 0.0),
        emit_propagations=data.get("emit_propagations", True),
        emit_embeddings=data.get("emit_embeddings", True),
    )


def write_scene(out_dir: str | Path, spec: SceneSpec, seed: int) -> Path:
    """Generate and persist a scene: bundle directory plus ground truth."""
    out = Path(out_dir)
    frames, bundle, gt, query = generate_scene(spec, seed)
    write_bundle(out, bundle)
    _, expected = scripted_expression(spec)
    gt_doc = {
        "query": query,
        "expected_query": {
            "candidates": list(expected.candidates),
            "context": list(expected.context),
            "motion": expected.motion,
            "posture": expected.posture,
            "count": expected.count,
        },
        "target_masks": [m.to_coco() for m in gt.target_masks.frames],
        "target_object_indices": list(gt.target_object_indices),
        "expected_track_ids": list(gt.expected_track_ids),
        "camera": [[c for row in cam.coefficients for c in row] for cam in gt.camera],
        "occlusion_order": [[list(pair) for pair in events] for events in gt.occlusion_order],
        "has_pan": gt.has_pan,
        "has_occlusion": gt.has_occlusion,
    }
    (out / "ground_truth.json").write_text(json.dumps(gt_doc, indent=0, sort_keys=True))
    (out / "query.txt").write_text(query + "\n")
    (out / "scene.json").write_text(
        json.dumps({"seed": seed, "scene": scene_spec_to_dict(spec)}, indent=2, sort_keys=True)
    )
    return out


# --- standard scenario suite --------------------------------------------------

ENTITIES = ("cat", "dog", "duck", "car", "rabbit", "cow")
CONTEXT_ENTITIES = ("green plate", "wooden bench", "blue bucket", "small tree")
BASE_COLORS = (
    (170, 80, 60),
    (70, 130, 170),
    (90, 160, 80),
    (170, 150, 60),
    (130, 90, 160),
)

SCENE_WIDTH = 144
SCENE_HEIGHT = 108
SCENE_FRAMES = 46
BANDS = (26, 56, 86)


def _linear_waypoints(t_count: int, x0: float, y0: float, vx: float, vy: float):
    return ((0, x0, y0), (t_count - 1, x0 + vx * (t_count - 1), y0 + vy * (t_count - 1)))


def _pan_stationary_scene(index: int, rng: np.random.Generator) -> SceneSpec:
    t_count = SCENE_FRAMES
    sign = 1 if rng.uniform() < 0.5 else -1
    pan = (2.0 * sign, 0.0)
    entity = ENTITIES[int(rng.integers(len(ENTITIES)))]
    size = float(rng.integers(22, 28))
    drift = pan[0] * (t_count - 1)  # image drift of static content is -drift
    # Static target: starts where the drift keeps it on screen.
    target_x = 112.0 if sign > 0 else 32.0
    # Decoy moves with the camera so it looks still on screen.
    decoy_img_x = float(rng.integers(28, 52))
    objects = [
        ObjectScript(
            category=entity,
            shape="rect",
            size=(size, size),
            layer=1,
            waypoints=_linear_waypoints(t_count, decoy_img_x, BANDS[0], pan[0], 0.0),
            color=BASE_COLORS[index % len(BASE_COLORS)],
        ),
        ObjectScript(
            category=entity,
            shape="ellipse",
            size=(size + 2, size),
            layer=2,
            waypoints=_linear_waypoints(t_count, target_x, BANDS[1], 0.0, 0.0),
            color=BASE_COLORS[(index + 1) % len(BASE_COLORS)],
        ),
    ]
    target_idx = 1
    if rng.uniform() < 0.5:
        # Third object: a slower co-mover, another wrong answer on screen.
        objects.append(
            ObjectScript(
                category=entity,
                shape="rect",
                size=(size - 2, size - 2),
                layer=3,
                waypoints=_linear_waypoints(
                    t_count, 72.0 if sign > 0 else 72.0, BANDS[2], pan[0] / 2.0, 0.0
                ),
                color=BASE_COLORS[(index + 2) % len(BASE_COLORS)],
            )
        )
    motion = "motionless" if index % 2 == 0 else "stationary"
    context = CONTEXT_ENTITIES[index % len(CONTEXT_ENTITIES)] if rng.uniform() < 0.4 else ""
    if context:
        objects.append(
            ObjectScript(
                category=context,
                shape="rect",
                size=(12, 9),
                layer=0,
                waypoints=_linear_waypoints(t_count, target_x - 26, BANDS[1] + 2, 0.0, 0.0),
                color=(60, 60, 60),
            )
        )
    return SceneSpec(
        name=f"pan-stationary-{index:03d}",
        width=SCENE_WIDTH,
        height=SCENE_HEIGHT,
        frame_count=t_count,
        objects=tuple(objects),
        camera=CameraScript(pan=pan),
        expression=ExpressionTemplate(
            entity=entity,
            target_indices=(target_idx,),
            motion=motion,
            context_entity=context,
        ),
    )


def _pan_direction_scene(index: int, rng: np.random.Generator, count: int = 1) -> SceneSpec:
    t_count = SCENE_FRAMES
    direction = "right" if index % 2 == 0 else "left"
    d = 1.0 if direction == "right" else -1.0
    pan = (2.0 * d, 0.0)  # camera outruns the target, reversing its apparent motion
    entity = ENTITIES[(index + 2) % len(ENTITIES)]
    size = float(rng.integers(20, 26))
    decoy_x = 112.0 if d > 0 else 32.0
    target_x = 70.0
    verb = ("moving", "walking", "running")[index % 3]
    objects = [
        ObjectScript(
            category=entity,
            shape="rect",
            size=(size, size),
            layer=1,
            waypoints=_linear_waypoints(t_count, decoy_x, BANDS[0], 0.0, 0.0),
            color=BASE_COLORS[index % len(BASE_COLORS)],
        ),
        ObjectScript(
            category=entity,
            shape="ellipse",
            size=(size, size + 2),
            layer=2,
            waypoints=_linear_waypoints(t_count, target_x, BANDS[1], d, 0.0),
            color=BASE_COLORS[(index + 3) % len(BASE_COLORS)],
        ),
    ]
    targets = [1]
    if count > 1:
        objects.append(
            ObjectScript(
                category=entity,
                shape="rect",
                size=(size - 2, size),
                layer=3,
                waypoints=_linear_waypoints(t_count, target_x + d * 6.0, BANDS[2], d, 0.0),
                color=BASE_COLORS[(index + 4) % len(BASE_COLORS)],
            )
        )
        targets.append(2)
    return SceneSpec(
        name=f"pan-direction-{index:03d}",
        width=SCENE_WIDTH,
        height=SCENE_HEIGHT,
        frame_count=t_count,
        objects=tuple(objects),
        camera=CameraScript(pan=pan),
        expression=ExpressionTemplate(
            entity=entity,
            target_indices=tuple(targets),
            motion=f"{verb} {direction}",
            count=count,
        ),
    )


def _occlusion_scene(index: int, rng: np.random.Generator) -> SceneSpec:
    t_count = SCENE_FRAMES
    entity = ENTITIES[(index + 4) % len(ENTITIES)]
    front_size, back_size = 30.0, 26.0
    x0 = float(rng.integers(34, 44))
    y_front = 54.0
    verb = ("walking", "riding", "moving")[index % 3]
    back = ObjectScript(
        category=entity,
        shape="rect",
        size=(back_size, back_size),
        layer=1,
        waypoints=(
            (0, x0 - 18.0, y_front + 5.0),
            (22, x0 - 18.0 + 22.0, y_front + 13.0),
            (t_count - 1, x0 - 18.0 + (t_count - 1.0), y_front + 3.0),
        ),
        color=BASE_COLORS[index % len(BASE_COLORS)],
    )
    front = ObjectScript(
        category=entity,
        shape="rect",
        size=(front_size, front_size),
        layer=2,
        waypoints=_linear_waypoints(t_count, x0, y_front, 1.0, 0.0),
        color=BASE_COLORS[(index + 1) % len(BASE_COLORS)],
    )
    return SceneSpec(
        name=f"occlusion-{index:03d}",
        width=SCENE_WIDTH,
        height=SCENE_HEIGHT,
        frame_count=t_count,
        objects=(back, front),
        camera=CameraScript(),
        expression=ExpressionTemplate(
            entity=entity,
            target_indices=(1,),
            motion=f"{verb} in front",
        ),
    )


def _posture_scene(index: int, rng: np.random.Generator) -> SceneSpec:
    t_count = SCENE_FRAMES
    entity = ENTITIES[(index + 1) % len(ENTITIES)]
    posture = ("standing", "sitting", "lying")[index % 3]
    n_objects = 2 + (index % 2)
    size = float(rng.integers(20, 26))
    objects = []
    xs = (36.0, 84.0, 118.0)
    for i in range(n_objects):
        objects.append(
            ObjectScript(
                category=entity,
                shape="rect" if i % 2 == 0 else "ellipse",
                size=(size, size + 2 * i),
                layer=i + 1,
                waypoints=_linear_waypoints(t_count, xs[i], BANDS[i % len(BANDS)], 0.0, 0.0),
                color=BASE_COLORS[(index + i) % len(BASE_COLORS)],
            )
        )
    target_idx = int(rng.integers(n_objects))
    motion = "stationary" if index % 5 < 2 else ""
    context = CONTEXT_ENTITIES[(index + 1) % len(CONTEXT_ENTITIES)] if index % 3 == 0 else ""
    if context:
        objects.append(
            ObjectScript(
                category=context,
                shape="rect",
                size=(12, 9),
                layer=0,
                waypoints=_linear_waypoints(
                    t_count, xs[target_idx] - 22, BANDS[target_idx % 3] + 4, 0.0, 0.0
                ),
                color=(55, 55, 55),
            )
        )
    return SceneSpec(
        name=f"posture-{index:03d}",
        width=SCENE_WIDTH,
        height=SCENE_HEIGHT,
        frame_count=t_count,
        objects=tuple(objects),
        camera=CameraScript(),
        expression=ExpressionTemplate(
            entity=entity,
            target_indices=(target_idx,),
            motion=motion,
            posture=posture,
            context_entity=context,
        ),
    )


def standard_suite(count: int = 50, seed: int = 0) -> list[Scenario]:
    """Deterministic scenario mix: pan, occlusion and posture scenes.

    Half the scenes pan the camera, at least 30% contain occlusions and a
    fifth need posture verification, matching the coverage the acceptance
    suite asks for.
    """
    quotas = {
        "pan-stationary": round(count * 13 / 50),
        "pan-direction": round(count * 12 / 50),
        "occlusion": round(count * 15 / 50),
    }
    quotas["posture"] = count - sum(quotas.values())
    scenarios: list[Scenario] = []
    builders = {
        "pan-stationary": _pan_stationary_scene,
        "pan-direction": _pan_direction_scene,
        "occlusion": _occlusion_scene,
        "posture": _posture_scene,
    }
    for kind in ("pan-stationary", "pan-direction", "occlusion", "posture"):
        for i in range(quotas[kind]):
            rng = np.random.default_rng(stable_seed(seed, kind, i))
            if kind == "pan-direction" and i >= quotas[kind] - 2:
                spec = _pan_direction_scene(i, rng, count=2)
            else:
                spec = builders[kind](i, rng)
            scenarios.append(Scenario(name=spec.name, spec=spec, seed=stable_seed(seed, "run", kind, i) % 2**31))
    return scenarios


def non_crossing_suite(count: int = 20, seed: int = 7) -> list[Scenario]:
    """Fully visible, non-overlapping scenes for exact trajectory recovery."""
    scenarios = []
    for i in range(count):
        rng = np.random.default_rng(stable_seed(seed, "plain", i))
        t_count = 31
        entity = ENTITIES[i % len(ENTITIES)]
        n = 2 + i % 2
        objects = []
        for j in range(n):
            vx = float(rng.integers(-2, 3))
            size = float(rng.integers(18, 26))
            max_drift = abs(vx) * (t_count - 1)
            x0 = float(rng.integers(18, max(19, 126 - int(max_drift))))
            if vx < 0:
                x0 = float(rng.integers(18 + int(max_drift), 126))
            objects.append(
                ObjectScript(
                    category=entity,
                    shape="rect" if j % 2 == 0 else "ellipse",
                    size=(size, size),
                    layer=j + 1,
                    waypoints=_linear_waypoints(t_count, x0, BANDS[j % 3], vx, 0.0),
                    color=BASE_COLORS[(i + j) % len(BASE_COLORS)],
                )
            )
        spec = SceneSpec(
            name=f"plain-{i:03d}",
            width=SCENE_WIDTH,
            height=SCENE_HEIGHT,
            frame_count=t_count,
            objects=tuple(objects),
            camera=CameraScript(),
            expression=ExpressionTemplate(entity=entity, target_indices=(0,), motion=""),
        )
        scenarios.append(Scenario(name=spec.name, spec=spec, seed=i))
    return scenarios
