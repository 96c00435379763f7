"""Trajectory formation from keyframe detections.

Tracks live as a lifecycle state machine: spawned on first appearance,
extended when a new detection's predicted short-term path agrees with the
track's own prediction (average IoU and centroid distance over a small
verification window), frozen after two consecutive unmatched keyframes,
and back-filled toward frame 0 when born late. Densification fills every
frame between keyframes from bundle propagations or box interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .bundle import (
    DetectionRecord,
    KeyframeSchedule,
    PerceptionBundle,
    instance_velocity,
    propagate_forward,
)
from .geometry import (
    BinaryMask,
    Box2D,
    box_centroid,
    box_iou,
    centroid_distance,
    round_half_away,
    translate_mask,
)

IOU_THRESHOLD = 0.6
DIST_THRESHOLD = 50.0
VERIFICATION_WINDOW = 3
MAX_MISSES = 2


class AssociationError(RuntimeError):
    """Propagation failed while scoring a track/detection pair."""


class TrackState(NamedTuple):
    box: Box2D
    mask: BinaryMask
    score: float
    instance_key: str


@dataclass
class Trajectory:
    """One candidate object's lifecycle over the keyframe schedule."""

    id: int
    category: str
    keyframe_states: dict[int, TrackState] = field(default_factory=dict)
    dense_masks: list[BinaryMask] | None = None
    misses: int = 0

    @property
    def birth_frame(self) -> int:
        return min(self.keyframe_states)

    @property
    def last_frame(self) -> int:
        return max(self.keyframe_states)

    @property
    def frozen(self) -> bool:
        return self.misses >= MAX_MISSES

    def state_at(self, keyframe: int) -> TrackState:
        return self.keyframe_states[keyframe]

    def velocity(self) -> tuple[float, float, float, float] | None:
        """Box velocity from the last two keyframe states, or None."""
        keys = sorted(self.keyframe_states)
        if len(keys) < 2:
            return None
        a, b = keys[-2], keys[-1]
        gap = b - a
        pa, pb = self.keyframe_states[a].box, self.keyframe_states[b].box
        return (
            (pb.xmin - pa.xmin) / gap,
            (pb.ymin - pa.ymin) / gap,
            (pb.xmax - pa.xmax) / gap,
            (pb.ymax - pa.ymax) / gap,
        )


@dataclass(frozen=True)
class MatchDecision:
    matched: bool
    avg_iou: float
    avg_centroid_dist: float
    window: int


def association_decision(
    avg_iou: float,
    avg_dist: float,
    window: int,
    iou_threshold: float = IOU_THRESHOLD,
    dist_threshold: float = DIST_THRESHOLD,
) -> MatchDecision:
    """Match iff average IoU reaches the floor and average distance the cap."""
    return MatchDecision(
        matched=(avg_iou >= iou_threshold and avg_dist <= dist_threshold),
        avg_iou=avg_iou,
        avg_centroid_dist=avg_dist,
        window=window,
    )


def predictive_association(
    legacy: Trajectory,
    candidate: DetectionRecord,
    window: int,
    bundle: PerceptionBundle,
    iou_threshold: float = IOU_THRESHOLD,
    dist_threshold: float = DIST_THRESHOLD,
) -> MatchDecision:
    """Compare short predicted futures of a track and a new detection.

    Both sides are propagated onto the ``window`` frames starting at the
    detection's keyframe; the pair matches when the average box IoU and
    average centroid distance both pass their thresholds.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    t_last = legacy.last_frame
    t_next = candidate.frame_index
    if t_next <= t_last:
        raise AssociationError(f"candidate frame {t_next} not after track frame {t_last}")
    state = legacy.state_at(t_last)
    try:
        legacy_path = propagate_forward(
            bundle,
            t_last,
            state.instance_key,
            horizon=t_next - t_last + window - 1,
            velocity=legacy.velocity(),
        )[-(window):]
        if window == 1:
            candidate_path = [(t_next, candidate.box, candidate.mask)]
        else:
            candidate_path = [(t_next, candidate.box, candidate.mask)] + propagate_forward(
                bundle, t_next, candidate.instance_key, horizon=window - 1
            )
    except KeyError as exc:
        raise AssociationError(str(exc)) from exc
    ious = []
    dists = []
    for (_, lbox, _), (_, cbox, _) in zip(legacy_path, candidate_path):
        ious.append(box_iou(lbox, cbox))
        dists.append(centroid_distance(lbox, cbox))
    avg_iou = sum(ious) / len(ious)
    avg_dist = sum(dists) / len(dists)
    return association_decision(avg_iou, avg_dist, window, iou_threshold, dist_threshold)


def _categories_match(a: str, b: str) -> bool:
    na, nb = a.strip().lower(), b.strip().lower()
    if na == nb:
        return True
    return na.rstrip("s") == nb.rstrip("s")


def greedy_commit(
    pairs: list[tuple[int, int, MatchDecision]]
) -> list[tuple[int, int]]:
    """Commit matches in descending average IoU, each side used once.

    ``pairs`` holds (track_id, detection_index, decision); ties break
    toward the smaller track id, then earlier detection.
    """
    order = sorted(
        (p for p in pairs if p[2].matched),
        key=lambda p: (-p[2].avg_iou, p[0], p[1]),
    )
    used_tracks: set[int] = set()
    used_dets: set[int] = set()
    committed: list[tuple[int, int]] = []
    for track_id, det_idx, _ in order:
        if track_id in used_tracks or det_idx in used_dets:
            continue
        used_tracks.add(track_id)
        used_dets.add(det_idx)
        committed.append((track_id, det_idx))
    return committed


def associate_keyframe(
    tracks: list[Trajectory],
    detections: list[DetectionRecord],
    window: int,
    bundle: PerceptionBundle,
    iou_threshold: float = IOU_THRESHOLD,
    dist_threshold: float = DIST_THRESHOLD,
) -> list[Trajectory]:
    """Extend same-category tracks with matching detections; spawn the rest.

    Alive (unfrozen) tracks that stay unmatched accrue a miss; two misses
    freeze a track for matching while it remains a candidate. New ids
    continue from the largest id seen so far.
    """
    alive = [t for t in tracks if not t.frozen]
    pairs: list[tuple[int, int, MatchDecision]] = []
    by_id = {t.id: t for t in tracks}
    for track in alive:
        for di, det in enumerate(detections):
            if not _categories_match(track.category, det.category):
                continue
            try:
                decision = predictive_association(
                    track, det, window, bundle, iou_threshold, dist_threshold
                )
            except AssociationError:
                continue
            pairs.append((track.id, di, decision))

    committed = greedy_commit(pairs)
    matched_tracks = {tid for tid, _ in committed}
    matched_dets = {di for _, di in committed}
    for tid, di in committed:
        det = detections[di]
        by_id[tid].keyframe_states[det.frame_index] = TrackState(
            det.box, det.mask, det.score, det.instance_key
        )
        by_id[tid].misses = 0

    for track in alive:
        if track.id not in matched_tracks:
            track.misses += 1

    next_id = max((t.id for t in tracks), default=-1) + 1
    for di, det in enumerate(detections):
        if di in matched_dets:
            continue
        tracks.append(
            Trajectory(
                id=next_id,
                category=det.category,
                keyframe_states={
                    det.frame_index: TrackState(det.box, det.mask, det.score, det.instance_key)
                },
            )
        )
        next_id += 1
    return tracks


def retroactive_fill(
    track: Trajectory, bundle: PerceptionBundle, schedule: KeyframeSchedule
) -> Trajectory:
    """Back-fill keyframe states before a late birth.

    Bundle-provided backward propagations are used when present, otherwise
    the box is walked backwards at the instance's (negated) constant
    velocity. Filling stops at frame 0 or at the first empty mask.
    """
    birth = track.birth_frame
    if birth == schedule.indices[0]:
        return track
    state = track.keyframe_states[birth]
    vel = instance_velocity(bundle, birth, state.instance_key)
    src_centroid = box_centroid(state.box)
    earlier = [k for k in schedule.indices if k < birth]
    for kf in reversed(earlier):
        entry = bundle.backward_propagations.get((birth, state.instance_key, kf))
        if entry is not None:
            box, mask = entry
        else:
            gap = birth - kf
            box = Box2D(
                state.box.xmin - vel[0] * gap,
                state.box.ymin - vel[1] * gap,
                state.box.xmax - vel[2] * gap,
                state.box.ymax - vel[3] * gap,
            )
            c = box_centroid(box)
            mask = translate_mask(
                state.mask,
                round_half_away(c.x - src_centroid.x),
                round_half_away(c.y - src_centroid.y),
            )
        if mask.is_empty:
            break
        track.keyframe_states[kf] = TrackState(box, mask, state.score, state.instance_key)
    return track


def _interpolated_state(
    a_frame: int, a: TrackState, b_frame: int, b: TrackState, frame: int
) -> tuple[Box2D, BinaryMask]:
    alpha = (frame - a_frame) / (b_frame - a_frame)
    box = Box2D(
        a.box.xmin + alpha * (b.box.xmin - a.box.xmin),
        a.box.ymin + alpha * (b.box.ymin - a.box.ymin),
        a.box.xmax + alpha * (b.box.xmax - a.box.xmax),
        a.box.ymax + alpha * (b.box.ymax - a.box.ymax),
    )
    ca, cb = box_centroid(a.box), box_centroid(box)
    mask = translate_mask(a.mask, round_half_away(cb.x - ca.x), round_half_away(cb.y - ca.y))
    return box, mask


def densify_track(
    track: Trajectory, schedule: KeyframeSchedule, bundle: PerceptionBundle
) -> Trajectory:
    """Fill ``dense_masks`` with one mask per video frame.

    Keyframe states are used directly; frames between consecutive states
    come from bundle propagations when available, else from linear box
    interpolation with mask translation. Frames outside the track's life
    get empty masks.
    """
    if not track.keyframe_states:
        raise ValueError("cannot densify a track with no keyframe states")
    empty = BinaryMask.empty(bundle.width, bundle.height)
    dense = [empty] * bundle.frame_count
    keys = sorted(track.keyframe_states)
    for kf in keys:
        dense[kf] = track.keyframe_states[kf].mask
    for a_frame, b_frame in zip(keys[:-1], keys[1:]):
        a = track.keyframe_states[a_frame]
        b = track.keyframe_states[b_frame]
        for frame in range(a_frame + 1, b_frame):
            entry = bundle.propagations.get((a_frame, a.instance_key, frame))
            if entry is not None:
                dense[frame] = entry[1]
            else:
                dense[frame] = _interpolated_state(a_frame, a, b_frame, b, frame)[1]
    track.dense_masks = dense
    return track


def build_trajectories(
    bundle: PerceptionBundle,
    schedule: KeyframeSchedule,
    window: int = VERIFICATION_WINDOW,
    iou_threshold: float = IOU_THRESHOLD,
    dist_threshold: float = DIST_THRESHOLD,
) -> list[Trajectory]:
    """Run the full lifecycle over the schedule and densify every track."""
    tracks: list[Trajectory] = []
    for i, keyframe in enumerate(schedule.indices):
        detections = list(bundle.detections_at(keyframe))
        if i == 0:
            for det in detections:
                tracks.append(
                    Trajectory(
                        id=len(tracks),
                        category=det.category,
                        keyframe_states={
                            keyframe: TrackState(det.box, det.mask, det.score, det.instance_key)
                        },
                    )
                )
            continue
        before = {t.id for t in tracks}
        tracks = associate_keyframe(
            tracks, detections, window, bundle, iou_threshold, dist_threshold
        )
        for track in tracks:
            if track.id not in before:
                retroactive_fill(track, bundle, schedule)
    for track in tracks:
        densify_track(track, schedule, bundle)
    return tracks


def serialize_boxes(track: Trajectory) -> str:
    """Keyframe boxes as ``t=<frame+1>: [xmin, ymin, xmax, ymax]; ...``."""
    parts = []
    for kf in sorted(track.keyframe_states):
        x0, y0, x1, y1 = track.keyframe_states[kf].box.rounded()
        parts.append(f"t={kf + 1}: [{x0}, {y0}, {x1}, {y1}]")
    return "; ".join(parts)


def dump_trajectories(tracks: list[Trajectory]) -> str:
    """Debug dump: one line per track, boxes in the serialization format."""
    lines = []
    for track in sorted(tracks, key=lambda t: t.id):
        lines.append(
            f"id={track.id} category={track.category} "
            f"birth={track.birth_frame} last={track.last_frame} :: {serialize_boxes(track)}"
        )
    return "\n".join(lines)
