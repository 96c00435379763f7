"""Coarse motion reasoning: rank candidate trajectories against the motion query.

Trajectories are serialized to timestamped box strings and combined with
camera-motion and occlusion summaries into a prompt for the language-model
endpoint. A deterministic keyword reasoner over camera-compensated
kinematics serves as offline fallback and as the degradation path when the
endpoint fails or returns garbage.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .context import CameraMotionModel, KinematicSummary, OcclusionEvent, kinematic_summary
from .llm import ChatClient, EndpointError, ReasonerConfig
from .tracking import Trajectory, serialize_boxes


class VerdictParseError(ValueError):
    """The endpoint response contained no usable candidate ids."""


@dataclass(frozen=True)
class MotionVerdict:
    """Ranked candidate ids plus an ambiguity flag."""

    ranked_ids: tuple[int, ...]
    ambiguous: bool
    rationale: str = ""

    def __post_init__(self) -> None:
        if len(set(self.ranked_ids)) != len(self.ranked_ids):
            raise ValueError("ranked ids must be unique")


AMBIGUITY_GAP = 0.1

STATIONARY_TERMS = {"stationary", "motionless", "static", "stopped", "still"}
MOVING_TERMS = {"moving", "walking", "running", "riding", "turning"}
DIRECTION_VECTORS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
}


def serialize_trajectory(track: Trajectory) -> str:
    """Timestamped integer boxes, frames 1-based, ascending."""
    return serialize_boxes(track)


def _camera_lines(camera: CameraMotionModel | None) -> list[str]:
    if camera is None:
        return ["not provided"]
    lines = []
    for (a, b), t in camera.sorted_intervals():
        dx, dy = t.translation_part
        lines.append(
            f"camera t={a + 1}..{b + 1}: dx={dx:.1f}, dy={dy:.1f}, "
            f"scale={t.scale:.3f}, rot={t.rotation_degrees:.1f}deg"
        )
    return lines or ["not provided"]


def _occlusion_lines(occlusions: list[OcclusionEvent] | None) -> list[str]:
    if not occlusions:
        return ["none observed"]
    return [
        f"t={e.frame + 1}: id {e.front_id} in front of id {e.back_id}"
        for e in sorted(occlusions, key=lambda e: (e.frame, e.front_id, e.back_id))
    ]


def build_motion_prompt(
    candidates: list[Trajectory],
    motion: str,
    camera: CameraMotionModel | None,
    occlusions: list[OcclusionEvent] | None,
    count: int,
) -> str:
    """Assemble the reasoning prompt from trajectories and scene context."""
    if not candidates:
        raise ValueError("candidates may not be empty")
    if not motion.strip():
        raise ValueError("motion description may not be empty")
    blocks = [
        f"id {t.id} ({t.category}): {serialize_trajectory(t)}"
        for t in sorted(candidates, key=lambda t: t.id)
    ]
    lines = [
        "You identify which tracked objects match a motion description.",
        f'Motion description: "{motion}"',
        f"Number of described targets: {count}",
        "",
        "Candidate trajectories (pixel boxes per sampled frame, origin top-left,",
        "x grows right, y grows down):",
        *blocks,
        "",
        "Camera motion between sampled frames (how the viewpoint itself moved):",
        *_camera_lines(camera),
        "",
        "Occlusion observations (which object is nearer when they overlap):",
        *_occlusion_lines(occlusions),
        "",
        "Reason step by step:",
        "1. Restate what motion the description requires.",
        "2. Subtract the camera motion from each trajectory to get true object motion.",
        "3. Use the occlusion observations for any front/behind requirements.",
        "4. Compare each candidate's true motion against the description.",
        "5. Rank the candidate ids from best to worst match.",
        "",
        "Answer on two lines exactly:",
        "RANKING: <comma-separated candidate ids, best first>",
        "AMBIGUOUS: <yes|no, yes when the top candidates are hard to tell apart>",
    ]
    return "\n".join(lines)


def parse_motion_response(text: str, candidate_ids: list[int], count: int) -> MotionVerdict:
    """Extract a ranked id list (first-occurrence order) and ambiguity flag."""
    valid = set(candidate_ids)
    ranked: list[int] = []
    for token in re.findall(r"-?\d+", text):
        value = int(token)
        if value in valid and value not in ranked:
            ranked.append(value)
    if not ranked:
        raise VerdictParseError("response names no valid candidate id")
    flag = re.search(r"ambiguous\s*[:=]?\s*(yes|no|true|false)", text, re.IGNORECASE)
    ambiguous = bool(flag and flag.group(1).lower() in ("yes", "true"))
    return MotionVerdict(ranked_ids=tuple(ranked), ambiguous=ambiguous, rationale=text)


def _term_scores(
    summary: KinematicSummary,
    motion_tokens: list[str],
    front_counts: dict[int, int],
    speed_rank: dict[int, float],
    track_id: int,
) -> list[float]:
    scores: list[float] = []
    max_front = max(front_counts.values(), default=0)
    for token in motion_tokens:
        if token in STATIONARY_TERMS:
            scores.append(summary.stationarity)
        elif token in MOVING_TERMS:
            scores.append(1.0 - summary.stationarity)
        elif token in DIRECTION_VECTORS:
            ux, uy = DIRECTION_VECTORS[token]
            nx, ny = summary.net_displacement
            norm = math.hypot(nx, ny)
            scores.append((nx * ux + ny * uy) / norm if norm > 1e-9 else 0.0)
        elif token == "front":
            if max_front > 0:
                scores.append(front_counts.get(track_id, 0) / max_front)
        elif token == "fast":
            scores.append(speed_rank[track_id])
        elif token == "slow":
            scores.append(1.0 - speed_rank[track_id])
    return scores


def fallback_motion_reason(
    candidates: list[Trajectory],
    motion: str,
    camera: CameraMotionModel,
    occlusions: list[OcclusionEvent] | None,
    count: int,
) -> MotionVerdict:
    """Deterministic keyword scoring over camera-compensated kinematics.

    Each recognised term contributes one score in favour of each candidate
    (stationarity, direction cosine, occlusion-front share, speed rank);
    candidates are ranked by the mean of applicable terms, ties toward the
    smaller id. The verdict is ambiguous when the scores around the
    requested count are closer than the ambiguity gap.
    """
    if not candidates:
        raise ValueError("candidates may not be empty")
    motion_tokens = re.findall(r"[a-z]+", motion.lower())

    summaries = {t.id: kinematic_summary(t, camera) for t in candidates}
    front_counts = {t.id: 0 for t in candidates}
    for event in occlusions or []:
        if event.front_id in front_counts:
            front_counts[event.front_id] += 1
    speeds = sorted(summaries, key=lambda tid: (summaries[tid].mean_speed, -tid))
    denom = max(1, len(speeds) - 1)
    speed_rank = {tid: i / denom for i, tid in enumerate(speeds)}

    composite: dict[int, float] = {}
    for track in candidates:
        scores = _term_scores(
            summaries[track.id], motion_tokens, front_counts, speed_rank, track.id
        )
        composite[track.id] = sum(scores) / len(scores) if scores else 0.5

    ranked = sorted(composite, key=lambda tid: (-composite[tid], tid))
    ambiguous = False
    if len(ranked) > count:
        gap = composite[ranked[count - 1]] - composite[ranked[count]]
        ambiguous = gap < AMBIGUITY_GAP
    rationale = "; ".join(f"id {tid}: {composite[tid]:.3f}" for tid in ranked)
    return MotionVerdict(ranked_ids=tuple(ranked), ambiguous=ambiguous, rationale=rationale)


def coarse_filter(
    candidates: list[Trajectory],
    motion: str,
    camera: CameraMotionModel,
    occlusions: list[OcclusionEvent] | None,
    count: int,
    config: ReasonerConfig,
    client: ChatClient | None = None,
    trace: list | None = None,
) -> list[Trajectory]:
    """Filter candidates down to the ids consistent with the motion query.

    With an empty motion description the candidates pass through unchanged.
    Otherwise the endpoint verdict (or the deterministic fallback) keeps
    the top ``count`` ids, widened to ``count + 2`` when the verdict is
    ambiguous so posture verification can settle it.
    """
    if not candidates:
        raise ValueError("candidates may not be empty")
    ordered = sorted(candidates, key=lambda t: t.id)
    record = {"stage": "motion_reasoning"}
    if trace is not None:
        trace.append(record)
    if not motion.strip():
        record.update({"skipped": True, "reason": "empty motion description"})
        return ordered

    candidate_ids = [t.id for t in ordered]
    verdict: MotionVerdict | None = None
    used_fallback = False
    if config.usable:
        client = client or ChatClient(config)
        prompt = build_motion_prompt(ordered, motion, camera, occlusions, count)
        record["prompt"] = prompt
        for attempt in range(1, config.retry_budget + 1):
            try:
                response = client.complete(prompt)
                verdict = parse_motion_response(response, candidate_ids, count)
                record.update({"response": response, "attempts": attempt})
                break
            except (EndpointError, VerdictParseError):
                continue
    if verdict is None:
        verdict = fallback_motion_reason(ordered, motion, camera, occlusions, count)
        used_fallback = True

    keep = count + 2 if verdict.ambiguous else count
    keep = max(count, min(keep, len(ordered)))
    ranked = list(verdict.ranked_ids)
    for tid in candidate_ids:
        if tid not in ranked:
            ranked.append(tid)
    chosen = ranked[:keep]
    by_id = {t.id: t for t in ordered}
    record.update(
        {
            "fallback": used_fallback,
            "ranked": ranked,
            "ambiguous": verdict.ambiguous,
            "rationale": verdict.rationale,
            "filtered": chosen,
        }
    )
    return [by_id[tid] for tid in chosen]
