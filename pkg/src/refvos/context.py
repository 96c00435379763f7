"""Scene context for trajectory reasoning: camera motion and occlusion.

The camera model chains per-frame affine transforms between consecutive
keyframes and composes them cumulatively from frame 0, so any observation
can be mapped back into first-frame coordinates. Occlusion order between
overlapping masks follows pixel cardinality: the larger mask is taken to
be in front. Kinematic summaries are computed on camera-compensated boxes
and feed the deterministic motion reasoner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .bundle import KeyframeSchedule, PerceptionBundle
from .flow import (
    AffineTransform,
    DegenerateGeometryError,
    InsufficientFeaturesError,
    estimate_affine,
    track_sparse_features,
)
from .geometry import Box2D, box_centroid

RANSAC_ITERS = 200
RANSAC_INLIER_PX = 2.0


class CameraModelError(RuntimeError):
    """The camera model cannot serve the requested keyframe."""


@dataclass(frozen=True)
class OcclusionEvent:
    """At ``frame``, track ``front_id`` occludes track ``back_id``."""

    frame: int
    front_id: int
    back_id: int
    overlap_px: int

    def __post_init__(self) -> None:
        if self.front_id == self.back_id:
            raise ValueError("an object cannot occlude itself")
        if self.overlap_px < 1:
            raise ValueError("overlap must cover at least one pixel")


@dataclass(frozen=True)
class CameraMotionModel:
    """Affine viewpoint motion between keyframes.

    ``intervals[(a, b)]`` maps frame-a coordinates onto frame-b coordinates;
    ``cumulative[k]`` maps frame-0 coordinates onto frame-k coordinates and
    is the identity at keyframe 0. ``flagged`` lists intervals that fell
    back to the identity for lack of trackable features.
    """

    width: int
    height: int
    intervals: dict[tuple[int, int], AffineTransform]
    cumulative: dict[int, AffineTransform]
    flagged: tuple[tuple[int, int], ...] = ()

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def sorted_intervals(self) -> list[tuple[tuple[int, int], AffineTransform]]:
        return sorted(self.intervals.items())


def identity_camera_model(schedule: KeyframeSchedule, width: int, height: int) -> CameraMotionModel:
    ident = AffineTransform.identity()
    intervals = {
        (a, b): ident for a, b in zip(schedule.indices[:-1], schedule.indices[1:])
    }
    cumulative = {k: ident for k in schedule.indices}
    return CameraMotionModel(width=width, height=height, intervals=intervals, cumulative=cumulative)


def _estimate_between(
    frame_a: np.ndarray, frame_b: np.ndarray, rng: np.random.Generator
) -> AffineTransform:
    corrs = track_sparse_features(frame_a, frame_b)
    return estimate_affine(corrs, RANSAC_ITERS, RANSAC_INLIER_PX, rng=rng)


def build_camera_model(
    bundle: PerceptionBundle,
    schedule: KeyframeSchedule,
    seed: int = 0,
) -> CameraMotionModel:
    """Estimate viewpoint motion for every consecutive keyframe interval.

    Each interval chains frame-to-frame estimates; if any step fails it
    falls back to a direct estimate across the interval, and failing that
    the interval becomes the identity and is flagged.
    """
    rng = np.random.default_rng(seed)
    intervals: dict[tuple[int, int], AffineTransform] = {}
    flagged: list[tuple[int, int]] = []
    pairs = list(zip(schedule.indices[:-1], schedule.indices[1:]))
    for a, b in pairs:
        transform: AffineTransform | None = None
        if bundle.has_frames:
            try:
                chained = AffineTransform.identity()
                residuals: list[float] = []
                inliers: list[int] = []
                for t in range(a, b):
                    step = _estimate_between(bundle.frame_image(t), bundle.frame_image(t + 1), rng)
                    residuals.append(step.residual)
                    inliers.append(step.inlier_count)
                    chained = step.compose(chained)
                transform = AffineTransform(
                    chained.coefficients,
                    residual=float(np.mean(residuals)) if residuals else 0.0,
                    inlier_count=min(inliers) if inliers else 0,
                )
            except (InsufficientFeaturesError, DegenerateGeometryError):
                try:
                    transform = _estimate_between(bundle.frame_image(a), bundle.frame_image(b), rng)
                except (InsufficientFeaturesError, DegenerateGeometryError):
                    transform = None
        if transform is None:
            transform = AffineTransform.identity()
            flagged.append((a, b))
        intervals[(a, b)] = transform

    cumulative: dict[int, AffineTransform] = {schedule.indices[0]: AffineTransform.identity()}
    for a, b in pairs:
        cumulative[b] = intervals[(a, b)].compose(cumulative[a])
    return CameraMotionModel(
        width=bundle.width,
        height=bundle.height,
        intervals=intervals,
        cumulative=cumulative,
        flagged=tuple(flagged),
    )


def compensate_box(box: Box2D, transform: AffineTransform) -> Box2D:
    """Map a box's corners through the inverse transform, re-axis-aligned."""
    inv = transform.inverse()
    xs: list[float] = []
    ys: list[float] = []
    for corner in box.corners():
        x, y = inv.apply(corner.x, corner.y)
        xs.append(x)
        ys.append(y)
    return Box2D.from_points(xs, ys)


def compensate_trajectory(track, camera: CameraMotionModel) -> dict[int, Box2D]:
    """Per-keyframe boxes mapped into frame-0 coordinates."""
    out: dict[int, Box2D] = {}
    for kf in sorted(track.keyframe_states):
        if kf not in camera.cumulative:
            raise CameraModelError(f"camera model does not cover keyframe {kf}")
        try:
            out[kf] = compensate_box(track.keyframe_states[kf].box, camera.cumulative[kf])
        except DegenerateGeometryError as exc:
            raise CameraModelError(str(exc)) from exc
    return out


def infer_occlusions(tracks, keyframe: int) -> list[OcclusionEvent]:
    """Front/back order for every pair of masks that touch at a keyframe.

    Masks are dilated by one pixel before the overlap test so abutting
    regions count; the track with the larger total pixel count is in
    front, ties going to the smaller id.
    """
    present = [t for t in tracks if keyframe in t.keyframe_states]
    dilated: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for t in present:
        mask = t.keyframe_states[keyframe].mask
        counts[t.id] = mask.count
        if mask.count:
            dilated[t.id] = ndimage.binary_dilation(mask.pixels, structure=np.ones((3, 3), bool))
    events: list[OcclusionEvent] = []
    ordered = sorted(present, key=lambda t: t.id)
    for i, ta in enumerate(ordered):
        if ta.id not in dilated:
            continue
        for tb in ordered[i + 1 :]:
            if tb.id not in dilated:
                continue
            overlap = int(np.logical_and(dilated[ta.id], dilated[tb.id]).sum())
            if overlap < 1:
                continue
            if counts[ta.id] > counts[tb.id]:
                front, back = ta.id, tb.id
            elif counts[tb.id] > counts[ta.id]:
                front, back = tb.id, ta.id
            else:
                front, back = min(ta.id, tb.id), max(ta.id, tb.id)
            events.append(OcclusionEvent(frame=keyframe, front_id=front, back_id=back, overlap_px=overlap))
    return events


DIRECTION_OCTANTS = ("right", "down-right", "down", "down-left", "left", "up-left", "up", "up-right")


@dataclass(frozen=True)
class KinematicSummary:
    """Motion digest of one trajectory in camera-compensated coordinates."""

    mean_speed: float
    direction: str
    stationarity: float
    net_displacement: tuple[float, float]
    path_length: float
    low_confidence: bool = False


def kinematic_summary(track, camera: CameraMotionModel) -> KinematicSummary:
    compensated = compensate_trajectory(track, camera)
    keyframes = sorted(compensated)
    centroids = [box_centroid(compensated[k]) for k in keyframes]
    if len(centroids) < 2:
        return KinematicSummary(0.0, "none", 1.0, (0.0, 0.0), 0.0, low_confidence=True)
    path = sum(
        math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(centroids[:-1], centroids[1:])
    )
    span = keyframes[-1] - keyframes[0]
    speed = path / span if span > 0 else 0.0
    net = (centroids[-1].x - centroids[0].x, centroids[-1].y - centroids[0].y)
    net_len = math.hypot(*net)
    if net_len < 0.5:  # sub-pixel drift is estimation noise, not motion
        direction = "none"
    else:
        angle = math.degrees(math.atan2(net[1], net[0]))  # y grows downward
        direction = DIRECTION_OCTANTS[int(round(angle / 45.0)) % 8]
    stationarity = 1.0 / (1.0 + path / (camera.diagonal * 0.01))
    return KinematicSummary(
        mean_speed=speed,
        direction=direction,
        stationarity=stationarity,
        net_displacement=net,
        path_length=path,
    )


def dump_camera_model(model: CameraMotionModel) -> str:
    """One line per interval: coefficients, inlier count, RMS residual."""
    lines = []
    for (a, b), t in model.sorted_intervals():
        coeffs = " ".join(f"{c:.6f}" for row in t.coefficients for c in row)
        lines.append(f"interval {a}..{b}: [{coeffs}] inliers={t.inlier_count} rms={t.residual:.6f}")
    return "\n".join(lines)
