"""End-to-end engine: query + perception bundle -> per-frame target masks.

Stages: decompose the query, build trajectories from keyframe detections,
estimate scene context (camera motion, occlusion order), filter candidates
by motion reasoning, optionally verify posture by embedding similarity,
then union the selected trajectories' dense masks. Every stage appends a
record to the run trace; a fixed seed plus offline reasoning makes the
whole run byte-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .bundle import KeyframeSchedule, PerceptionBundle, sample_keyframes
from .context import (
    CameraMotionModel,
    OcclusionEvent,
    build_camera_model,
    identity_camera_model,
    infer_occlusions,
)
from .geometry import BinaryMask, MaskSequence, union_masks
from .llm import ChatClient, ReasonerConfig
from .metrics import EvalReport, evaluate_masks
from .pose import (
    MissingEmbeddingError,
    rank_by_similarity,
    select_discriminative_keyframes,
    should_activate,
)
from .query import StructuredQuery, decompose
from .reasoning import coarse_filter
from .simulator import Scenario, generate_scene, stable_seed
from .tracking import (
    Trajectory,
    _categories_match,
    build_trajectories,
    dump_trajectories,
)

OVERLAY_PALETTE = (
    (235, 80, 60),
    (60, 140, 235),
    (70, 190, 90),
    (235, 190, 60),
    (180, 90, 200),
    (90, 200, 200),
)


@dataclass(frozen=True)
class PipelineConfig:
    """Tunables for one run; defaults follow the reference configuration."""

    keyframe_interval: int = 15
    iou_threshold: float = 0.6
    dist_threshold: float = 50.0
    window: int = 3
    pose_keyframes: int = 3
    boundary_radius: int | None = None
    use_cmr: bool = True
    use_fpv: bool = True
    use_cmm: bool = True
    use_or: bool = True
    seed: int = 0
    reasoner: ReasonerConfig = field(default_factory=ReasonerConfig)

    def replace(self, **kwargs) -> "PipelineConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        data = {
            "keyframe_interval": self.keyframe_interval,
            "iou_threshold": self.iou_threshold,
            "dist_threshold": self.dist_threshold,
            "window": self.window,
            "pose_keyframes": self.pose_keyframes,
            "boundary_radius": self.boundary_radius,
            "use_cmr": self.use_cmr,
            "use_fpv": self.use_fpv,
            "use_cmm": self.use_cmm,
            "use_or": self.use_or,
            "seed": self.seed,
        }
        data.update(
            {
                "endpoint_url": self.reasoner.endpoint_url,
                "model": self.reasoner.model,
                "temperature": self.reasoner.temperature,
                "top_p": self.reasoner.top_p,
                "top_k": self.reasoner.top_k,
                "retry_budget": self.reasoner.retry_budget,
                "offline": self.reasoner.offline,
                "send_top_k": self.reasoner.send_top_k,
            }
        )
        return data

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        reasoner = ReasonerConfig(
            endpoint_url=data.get("endpoint_url", ""),
            model=data.get("model", "llama-3-8b-instruct"),
            temperature=data.get("temperature", 0.7),
            top_p=data.get("top_p", 0.95),
            top_k=data.get("top_k", 0),
            retry_budget=data.get("retry_budget", 3),
            offline=data.get("offline", False),
            send_top_k=data.get("send_top_k", False),
        )
        return PipelineConfig(
            keyframe_interval=data.get("keyframe_interval", 15),
            iou_threshold=data.get("iou_threshold", 0.6),
            dist_threshold=data.get("dist_threshold", 50.0),
            window=data.get("window", 3),
            pose_keyframes=data.get("pose_keyframes", 3),
            boundary_radius=data.get("boundary_radius"),
            use_cmr=data.get("use_cmr", True),
            use_fpv=data.get("use_fpv", True),
            use_cmm=data.get("use_cmm", True),
            use_or=data.get("use_or", True),
            seed=data.get("seed", 0),
            reasoner=reasoner,
        )

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(Path(path).read_text()))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class RunResult:
    video_id: str
    query: str
    structured: StructuredQuery
    masks: MaskSequence
    selected_ids: tuple[int, ...]
    candidate_count: int
    filtered_count: int
    fpv_activated: bool
    zero_candidates: bool
    per_track_masks: dict[int, list[BinaryMask]]
    trace: list[dict]


@dataclass
class PreparedPerception:
    """Query-independent stage outputs, reusable across configurations."""

    schedule: KeyframeSchedule
    tracks: list[Trajectory]
    camera: CameraMotionModel
    occlusions: list[OcclusionEvent]
    camera_estimated: bool


def prepare_perception(bundle: PerceptionBundle, config: PipelineConfig) -> PreparedPerception:
    schedule = sample_keyframes(bundle.frame_count, config.keyframe_interval)
    for frame in bundle.detection_frames():
        if frame not in schedule:
            raise ValueError(
                f"bundle has detections at frame {frame}, which is not on the "
                f"keyframe schedule for interval {config.keyframe_interval}"
            )
    tracks = build_trajectories(
        bundle,
        schedule,
        window=config.window,
        iou_threshold=config.iou_threshold,
        dist_threshold=config.dist_threshold,
    )
    if bundle.has_frames:
        camera = build_camera_model(bundle, schedule, seed=config.seed)
        estimated = True
    else:
        camera = identity_camera_model(schedule, bundle.width, bundle.height)
        estimated = False
    occlusions: list[OcclusionEvent] = []
    for keyframe in schedule.indices:
        occlusions.extend(infer_occlusions(tracks, keyframe))
    return PreparedPerception(
        schedule=schedule,
        tracks=tracks,
        camera=camera,
        occlusions=occlusions,
        camera_estimated=estimated,
    )


def _empty_result(
    bundle: PerceptionBundle, query: str, structured: StructuredQuery, trace: list[dict]
) -> RunResult:
    empty = BinaryMask.empty(bundle.width, bundle.height)
    trace.append({"stage": "selection", "ids": [], "mode": "zero-candidates"})
    return RunResult(
        video_id=bundle.video_id,
        query=query,
        structured=structured,
        masks=MaskSequence(bundle.video_id, tuple([empty] * bundle.frame_count)),
        selected_ids=(),
        candidate_count=0,
        filtered_count=0,
        fpv_activated=False,
        zero_candidates=True,
        per_track_masks={},
        trace=trace,
    )


def run_pipeline(
    bundle: PerceptionBundle,
    query_text: str,
    config: PipelineConfig,
    client: ChatClient | None = None,
    prepared: PreparedPerception | None = None,
) -> RunResult:
    """Map a video bundle and a referring expression to per-frame masks.

    With both reasoning stages disabled the selection falls back to a
    seeded uniform draw, which serves as the ablation baseline.
    """
    trace: list[dict] = []
    structured, decomp_info = decompose(query_text, config.reasoner, client=client)
    trace.append(
        {
            "stage": "decompose",
            "query": query_text,
            "source": decomp_info["source"],
            "attempts": decomp_info["attempts"],
            "candidates": list(structured.candidates),
            "context": list(structured.context),
            "motion": structured.motion,
            "posture": structured.posture,
            "count": structured.count,
        }
    )

    if prepared is None:
        prepared = prepare_perception(bundle, config)
    schedule, tracks = prepared.schedule, prepared.tracks
    trace.append(
        {"stage": "schedule", "interval": config.keyframe_interval, "indices": list(schedule.indices)}
    )
    trace.append(
        {
            "stage": "tracking",
            "tracks": [
                {
                    "id": t.id,
                    "category": t.category,
                    "birth": t.birth_frame,
                    "last": t.last_frame,
                    "keyframes": len(t.keyframe_states),
                }
                for t in sorted(tracks, key=lambda t: t.id)
            ],
        }
    )

    candidates = [
        t
        for t in tracks
        if any(_categories_match(t.category, entity) for entity in structured.candidates)
    ]
    candidates.sort(key=lambda t: t.id)
    trace.append(
        {
            "stage": "candidates",
            "ids": [t.id for t in candidates],
            "all_track_ids": sorted(t.id for t in tracks),
        }
    )
    if not candidates:
        return _empty_result(bundle, query_text, structured, trace)

    camera = prepared.camera if config.use_cmm else identity_camera_model(
        schedule, bundle.width, bundle.height
    )
    trace.append(
        {
            "stage": "camera",
            "enabled": config.use_cmm,
            "estimated": prepared.camera_estimated and config.use_cmm,
            "intervals": [
                {
                    "from": a,
                    "to": b,
                    "coefficients": [round(c, 6) for row in t.coefficients for c in row],
                    "inliers": t.inlier_count,
                    "residual": round(t.residual, 6),
                    "flagged": (a, b) in camera.flagged,
                }
                for (a, b), t in camera.sorted_intervals()
            ],
        }
    )
    occlusions = prepared.occlusions if config.use_or else []
    trace.append(
        {
            "stage": "occlusion",
            "enabled": config.use_or,
            "events": [
                {"frame": e.frame, "front": e.front_id, "back": e.back_id, "overlap": e.overlap_px}
                for e in occlusions
            ],
        }
    )

    ranked = False
    filtered = candidates
    if config.use_cmr and structured.motion.strip():
        filtered = coarse_filter(
            candidates,
            structured.motion,
            camera,
            occlusions,
            structured.count,
            config.reasoner,
            client=client,
            trace=trace,
        )
        ranked = True
    else:
        trace.append(
            {
                "stage": "motion_reasoning",
                "skipped": True,
                "reason": "disabled" if not config.use_cmr else "empty motion description",
            }
        )

    fpv_activated = False
    if config.use_fpv and should_activate(filtered, structured.count, structured.posture):
        frames = select_discriminative_keyframes(filtered, config.pose_keyframes)
        record = {
            "stage": "pose_verification",
            "activated": True,
            "frames": frames,
            "truncated": len(frames) < config.pose_keyframes,
        }
        try:
            ranking = rank_by_similarity(
                filtered,
                structured.posture,
                structured.count,
                bundle.embeddings,
                frames=frames,
            )
            by_id = {t.id: t for t in filtered}
            filtered = [by_id[tid] for tid in ranking]
            ranked = True
            fpv_activated = True
            record["ranking"] = ranking
        except (MissingEmbeddingError, ValueError) as exc:
            record.update({"activated": False, "error": str(exc)})
        trace.append(record)
    else:
        trace.append({"stage": "pose_verification", "activated": False})

    take = min(structured.count, len(candidates))
    if ranked:
        order = [t.id for t in filtered]
        for t in candidates:
            if t.id not in order:
                order.append(t.id)
        selected = tuple(order[:take])
        mode = "ranking"
    else:
        rng = np.random.default_rng(stable_seed(config.seed, bundle.video_id) % 2**63)
        pool = sorted(t.id for t in candidates)
        selected = tuple(int(i) for i in rng.choice(pool, size=take, replace=False))
        mode = "random"
    trace.append({"stage": "selection", "ids": list(selected), "mode": mode})

    by_id = {t.id: t for t in tracks}
    per_track = {tid: list(by_id[tid].dense_masks or []) for tid in selected}
    frames_out: list[BinaryMask] = []
    for f in range(bundle.frame_count):
        frames_out.append(
            union_masks([per_track[tid][f] for tid in selected], bundle.width, bundle.height)
        )
    return RunResult(
        video_id=bundle.video_id,
        query=query_text,
        structured=structured,
        masks=MaskSequence(bundle.video_id, tuple(frames_out)),
        selected_ids=selected,
        candidate_count=len(candidates),
        filtered_count=len(filtered),
        fpv_activated=fpv_activated,
        zero_candidates=False,
        per_track_masks=per_track,
        trace=trace,
    )


def evaluate_run(result: RunResult, gt: MaskSequence, radius: int | None = None) -> EvalReport:
    return evaluate_masks(result.masks, gt, radius=radius)


def run_result_to_dict(result: RunResult) -> dict:
    return {
        "video_id": result.video_id,
        "query": result.query,
        "structured_query": {
            "candidates": list(result.structured.candidates),
            "context": list(result.structured.context),
            "motion": result.structured.motion,
            "posture": result.structured.posture,
            "count": result.structured.count,
        },
        "selected_ids": list(result.selected_ids),
        "candidate_count": result.candidate_count,
        "filtered_count": result.filtered_count,
        "fpv_activated": result.fpv_activated,
        "zero_candidates": result.zero_candidates,
        "frame_count": len(result.masks),
        "masks": [m.to_coco() for m in result.masks.frames],
        "per_track_masks": {
            str(tid): [m.to_coco() for m in masks]
            for tid, masks in sorted(result.per_track_masks.items())
        },
    }


def write_run_result(out_dir: str | Path, result: RunResult, dump_tracks: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(
        json.dumps(run_result_to_dict(result), indent=2, sort_keys=True) + "\n"
    )
    with (out / "trace.jsonl").open("w") as fh:
        for record in result.trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return out


def render_overlays(result: RunResult, bundle: PerceptionBundle, out_dir: str | Path) -> list[Path]:
    """Blend each selected track's mask onto the frames and label it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for f in range(bundle.frame_count):
        frame = bundle.frame_image(f)
        if frame.ndim == 2:
            frame = np.repeat(frame[:, :, None], 3, axis=2)
        canvas = frame.astype(np.float64)
        labels = []
        for slot, tid in enumerate(sorted(result.per_track_masks)):
            mask = result.per_track_masks[tid][f]
            if mask.is_empty:
                continue
            color = np.array(OVERLAY_PALETTE[slot % len(OVERLAY_PALETTE)], dtype=np.float64)
            px = mask.pixels
            canvas[px] = 0.55 * canvas[px] + 0.45 * color
            box = mask.bounding_box()
            if box is not None:
                labels.append((tid, box))
        image = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8))
        draw = ImageDraw.Draw(image)
        for tid, box in labels:
            draw.text((box.xmin, max(0.0, box.ymin - 10)), f"id {tid}", fill=(255, 255, 255))
        path = out / f"{f:06d}.png"
        image.save(path)
        written.append(path)
    return written


REASONING_VARIANTS = {
    "baseline": {"use_cmr": False, "use_fpv": False},
    "cmr": {"use_cmr": True, "use_fpv": False},
    "fpv": {"use_cmr": False, "use_fpv": True},
    "full": {"use_cmr": True, "use_fpv": True},
}
CONTEXT_VARIANTS = {
    "trajectory_only": {"use_cmm": False, "use_or": False},
    "cmm": {"use_cmm": True, "use_or": False},
    "or": {"use_cmm": False, "use_or": True},
    "full_context": {"use_cmm": True, "use_or": True},
}


@dataclass
class AblationReport:
    scene_count: int
    pan_count: int
    occlusion_count: int
    reasoning: dict[str, float]
    context: dict[str, dict[str, float]]
    per_scene: list[dict]

    def to_dict(self) -> dict:
        return {
            "scene_count": self.scene_count,
            "pan_count": self.pan_count,
            "occlusion_count": self.occlusion_count,
            "reasoning": self.reasoning,
            "context": self.context,
            "per_scene": self.per_scene,
        }


def run_ablation_suite(scenarios: list[Scenario], config: PipelineConfig) -> AblationReport:
    """Score every reasoning and context variant over a scenario set.

    Reasoning variants toggle the two reasoning stages with full context;
    context variants toggle the camera model and occlusion priors with both
    reasoning stages on. Perception (tracking, camera estimation) is shared
    across variants per scene.
    """
    if not scenarios:
        raise ValueError("scenario set may not be empty")
    rows: list[dict] = []
    for scenario in scenarios:
        _, bundle, gt, query = generate_scene(scenario.spec, scenario.seed)
        prepared = prepare_perception(bundle, config)
        scene_row = {
            "name": scenario.name,
            "pan": gt.has_pan,
            "occlusion": gt.has_occlusion,
            "scores": {},
        }
        variant_configs: dict[str, PipelineConfig] = {}
        for name, flags in REASONING_VARIANTS.items():
            variant_configs[f"reasoning/{name}"] = config.replace(
                use_cmm=True, use_or=True, **flags
            )
        for name, flags in CONTEXT_VARIANTS.items():
            variant_configs[f"context/{name}"] = config.replace(
                use_cmr=True, use_fpv=True, **flags
            )
        for key, variant_config in variant_configs.items():
            result = run_pipeline(bundle, query, variant_config, prepared=prepared)
            report = evaluate_run(result, gt.target_masks, radius=config.boundary_radius)
            scene_row["scores"][key] = report.jf_mean
        rows.append(scene_row)

    def mean_over(keys: list[str], predicate=None) -> dict[str, float]:
        chosen = [r for r in rows if predicate is None or predicate(r)]
        return {
            key.split("/", 1)[1]: float(np.mean([r["scores"][key] for r in chosen]))
            for key in keys
        }

    reasoning_keys = [f"reasoning/{name}" for name in REASONING_VARIANTS]
    context_keys = [f"context/{name}" for name in CONTEXT_VARIANTS]
    context_summary = {}
    for key in context_keys:
        name = key.split("/", 1)[1]
        context_summary[name] = {
            "overall": float(np.mean([r["scores"][key] for r in rows])),
            "pan": float(
                np.mean([r["scores"][key] for r in rows if r["pan"]])
            )
            if any(r["pan"] for r in rows)
            else float("nan"),
            "occlusion": float(
                np.mean([r["scores"][key] for r in rows if r["occlusion"]])
            )
            if any(r["occlusion"] for r in rows)
            else float("nan"),
        }
    return AblationReport(
        scene_count=len(rows),
        pan_count=sum(1 for r in rows if r["pan"]),
        occlusion_count=sum(1 for r in rows if r["occlusion"]),
        reasoning=mean_over(reasoning_keys),
        context=context_summary,
        per_scene=rows,
    )


__all__ = [
    "AblationReport",
    "PipelineConfig",
    "PreparedPerception",
    "RunResult",
    "dump_trajectories",
    "evaluate_run",
    "prepare_perception",
    "render_overlays",
    "run_ablation_suite",
    "run_pipeline",
    "run_result_to_dict",
    "write_run_result",
]
