"""Acceptance suite: one test per release criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from refvos.bundle import PerceptionBundle, sample_keyframes
from refvos.context import build_camera_model, compensate_trajectory
from refvos.flow import Correspondence, estimate_affine
from refvos.geometry import BinaryMask, Box2D, MaskSequence, Point2D, box_centroid, box_iou
from refvos.llm import ReasonerConfig
from refvos.metrics import boundary_match_radius, evaluate_masks, jf_mean
from refvos.pipeline import (
    PipelineConfig,
    evaluate_run,
    run_ablation_suite,
    run_pipeline,
    run_result_to_dict,
)
from refvos.pose import should_activate
from refvos.query import heuristic_decompose
from refvos.simulator import (
    CameraScript,
    ExpressionTemplate,
    ObjectScript,
    SceneSpec,
    _linear_waypoints,
    generate_scene,
    non_crossing_suite,
    scripted_expression,
    standard_suite,
)
from refvos.tracking import (
    Trajectory,
    TrackState,
    association_decision,
    build_trajectories,
    serialize_boxes,
)

from conftest import block_detection
from test_metrics import brute_f, brute_iou

DATA_DIR = Path(__file__).parent / "data"


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"acceptance: {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def offline_config(**kwargs) -> PipelineConfig:
    return PipelineConfig(reasoner=ReasonerConfig(offline=True), **kwargs)


@pytest.fixture(scope="module")
def scenario_suite():
    return standard_suite(50, seed=0)


class TestMetricsOracle:
    def test_metrics_match_brute_force(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        fixtures = 0
        for size in (5, 6, 8, 9, 11, 12, 13, 14, 15, 16, 7, 10):
            pred = BinaryMask.from_array(rng.uniform(size=(size, size)) > 0.55)
            gt = BinaryMask.from_array(rng.uniform(size=(size, size)) > 0.55)
            seq_p = MaskSequence("p", (pred,))
            seq_g = MaskSequence("g", (gt,))
            got = evaluate_masks(seq_p, seq_g)
            radius = boundary_match_radius(size, size)
            expect_j = brute_iou(pred.pixels, gt.pixels)
            expect_f = brute_f(pred.pixels, gt.pixels, radius)
            worst = max(worst, abs(got.j_mean - expect_j), abs(got.f_mean - expect_f))
            fixtures += 1
        arithmetic_ok = abs(jf_mean(0.492, 0.556) - 0.524) <= 1e-12
        report(
            "metrics-oracle",
            fixtures >= 10 and worst <= 1e-12 and arithmetic_ok,
            f"fixtures={fixtures} worst-abs-err={worst:.2e}",
        )


class TestAffineRecovery:
    def test_thirty_seeded_correspondence_sets(self):
        worst_coeff = 0.0
        worst_translation = 0.0
        worst_ms = 0.0
        for trial in range(30):
            rng = np.random.default_rng(500 + trial)
            theta = rng.uniform(-0.35, 0.35)
            scale = rng.uniform(0.8, 1.2)
            matrix = np.array(
                [
                    [scale * np.cos(theta), -scale * np.sin(theta), rng.uniform(-40, 40)],
                    [scale * np.sin(theta), scale * np.cos(theta), rng.uniform(-40, 40)],
                ]
            )
            pts = rng.uniform(0, 200, size=(50, 2))
            mapped = pts @ matrix[:, :2].T + matrix[:, 2]
            outliers = rng.choice(50, size=10, replace=False)
            mapped[outliers] += rng.uniform(15, 70, size=(10, 2)) * rng.choice(
                [-1.0, 1.0], size=(10, 2)
            )
            corrs = [
                Correspondence(Point2D(*p), Point2D(*q)) for p, q in zip(pts, mapped)
            ]
            start = time.perf_counter()
            got = estimate_affine(corrs, rng=np.random.default_rng(trial))
            elapsed_ms = (time.perf_counter() - start) * 1000
            errs = np.abs(np.array(got.coefficients) - matrix)
            worst_coeff = max(worst_coeff, float(errs[:, :2].max()))
            worst_translation = max(worst_translation, float(errs[:, 2].max()))
            worst_ms = max(worst_ms, elapsed_ms)
        report(
            "affine-recovery",
            worst_coeff < 1e-3 and worst_translation < 0.5 and worst_ms < 50,
            f"coeff={worst_coeff:.2e} translation={worst_translation:.2e} worst={worst_ms:.1f}ms",
        )


class TestCameraClosedLoop:
    def pan_spec(self, name, second_object=False):
        objects = [
            ObjectScript("cat", "rect", (24, 24), 1, _linear_waypoints(46, 112, 30, 0, 0)),
        ]
        if second_object:
            objects.append(
                ObjectScript("cat", "ellipse", (22, 22), 2, _linear_waypoints(46, 100, 78, 0, 0))
            )
        return SceneSpec(
            name=name,
            width=144,
            height=108,
            frame_count=46,
            objects=tuple(objects),
            camera=CameraScript(pan=(2.0, 0.0)),
            expression=ExpressionTemplate(entity="cat", target_indices=(0,)),
        )

    def test_pan_recovery_and_compensation(self):
        worst_per_frame = 0.0
        worst_variance = 0.0
        for i, second in enumerate((False, True, False)):
            spec = self.pan_spec(f"closed-loop-{i}", second)
            _, bundle, gt, _ = generate_scene(spec, 100 + i)
            schedule = sample_keyframes(bundle.frame_count, 15)
            camera = build_camera_model(bundle, schedule, seed=0)
            for (a, b), t in camera.sorted_intervals():
                true = gt.camera[b].compose(gt.camera[a].inverse())
                err = max(
                    abs(t.translation_part[0] - true.translation_part[0]),
                    abs(t.translation_part[1] - true.translation_part[1]),
                ) / (b - a)
                worst_per_frame = max(worst_per_frame, err)
            tracks = build_trajectories(bundle, schedule)
            for track in tracks:
                comp = compensate_trajectory(track, camera)
                pts = np.array([[c.x, c.y] for c in map(box_centroid, comp.values())])
                variance = float(np.var(pts[:, 0]) + np.var(pts[:, 1]))
                worst_variance = max(worst_variance, variance)
        report(
            "camera-closed-loop",
            worst_per_frame < 0.2 and worst_variance < 1.0,
            f"translation={worst_per_frame:.3f}px/frame variance={worst_variance:.3f}px2",
        )


class TestAssociationCriterion:
    def test_threshold_semantics_and_recovery(self):
        rng = np.random.default_rng(77)
        rule_ok = True
        for _ in range(500):
            iou = float(rng.uniform(0, 1))
            dist = float(rng.uniform(0, 120))
            decision = association_decision(iou, dist, 3)
            rule_ok &= decision.matched == (iou >= 0.6 and dist <= 50.0)
            better = association_decision(min(1.0, iou + rng.uniform(0, 0.3)), dist, 3)
            closer = association_decision(iou, max(0.0, dist - rng.uniform(0, 30)), 3)
            if decision.matched:
                rule_ok &= better.matched and closer.matched
        rule_ok &= association_decision(0.6, 50.0, 3).matched
        rule_ok &= not association_decision(0.55, 10.0, 3).matched
        rule_ok &= not association_decision(0.7, 60.0, 3).matched

        scenes = non_crossing_suite(20, seed=7)
        recovery_ok = True
        worst_iou = 1.0
        for scenario in scenes:
            _, bundle, gt, _ = generate_scene(scenario.spec, scenario.seed)
            schedule = sample_keyframes(bundle.frame_count, 15)
            tracks = build_trajectories(bundle, schedule)
            recovery_ok &= len(tracks) == len(scenario.spec.objects)
            for gt_boxes in gt.keyframe_boxes:
                first = min(gt_boxes)
                track = max(
                    tracks,
                    key=lambda t: box_iou(t.keyframe_states[first].box, gt_boxes[first])
                    if first in t.keyframe_states
                    else -1.0,
                )
                for kf, box in gt_boxes.items():
                    if kf not in track.keyframe_states:
                        recovery_ok = False
                        continue
                    value = box_iou(track.keyframe_states[kf].box, box)
                    worst_iou = min(worst_iou, value)
        report(
            "association-criterion",
            rule_ok and recovery_ok and worst_iou == 1.0,
            f"rule={rule_ok} scenes=20 worst-box-iou={worst_iou}",
        )


class TestEndToEndSuite:
    def test_fifty_scenarios_offline(self, scenario_suite):
        config = offline_config()
        start = time.perf_counter()
        scores = []
        pan = occl = posture = 0
        for scenario in scenario_suite:
            _, bundle, gt, query = generate_scene(scenario.spec, scenario.seed)
            result = run_pipeline(bundle, query, config)
            score = evaluate_run(result, gt.target_masks).jf_mean
            scores.append(score)
            pan += gt.has_pan
            occl += gt.has_occlusion
            posture += bool(scenario.spec.expression.posture)
        elapsed = time.perf_counter() - start
        mean = float(np.mean(scores))
        ok = (
            len(scores) >= 50
            and mean >= 0.90
            and elapsed < 120
            and pan >= 25
            and occl >= 15
            and posture >= 10
        )
        report(
            "end-to-end-synthetic",
            ok,
            f"mean-jf={mean:.4f} scenes={len(scores)} pan={pan} occlusion={occl} "
            f"posture={posture} runtime={elapsed:.1f}s",
        )


class TestAblationOrdering:
    def test_variant_ordering(self, scenario_suite):
        config = offline_config()
        result = run_ablation_suite(scenario_suite, config)
        r = result.reasoning
        c = result.context
        reasoning_ok = r["full"] >= r["cmr"] >= r["baseline"] and r["full"] >= r["fpv"] >= r["baseline"]
        cmm_gap = c["cmm"]["pan"] - c["trajectory_only"]["pan"]
        or_gap = c["or"]["occlusion"] - c["trajectory_only"]["occlusion"]
        ok = reasoning_ok and cmm_gap >= 0.10 and or_gap >= 0.05
        report(
            "ablation-ordering",
            ok,
            f"baseline={r['baseline']:.3f} cmr={r['cmr']:.3f} fpv={r['fpv']:.3f} "
            f"full={r['full']:.3f} cmm-gap={cmm_gap:.3f} or-gap={or_gap:.3f}",
        )


def golden_bundle() -> PerceptionBundle:
    det0 = block_detection(0, "a", 2, 2, 11, 9, width=16, height=12, category="cat")
    det2 = block_detection(2, "a", 3, 2, 12, 9, width=16, height=12, category="cat")
    return PerceptionBundle(
        video_id="golden",
        width=16,
        height=12,
        frame_count=3,
        detections_by_frame={0: (det0,), 2: (det2,)},
    )


def golden_run():
    return run_pipeline(golden_bundle(), "the cat moving right", offline_config())


class TestSerializationBitExact:
    def test_golden_formats_and_reruns(self):
        track = Trajectory(
            id=0,
            category="cat",
            keyframe_states={
                0: TrackState(
                    Box2D(10.4, 20.5, 50, 80),
                    BinaryMask.empty(4, 4),
                    1.0,
                    "a",
                ),
                15: TrackState(
                    Box2D(11, 21, 51, 81),
                    BinaryMask.empty(4, 4),
                    1.0,
                    "a",
                ),
            },
        )
        line_ok = serialize_boxes(track) == "t=1: [10, 21, 50, 80]; t=16: [11, 21, 51, 81]"

        first = golden_run()
        second = golden_run()
        results_text = json.dumps(run_result_to_dict(first), indent=2, sort_keys=True) + "\n"
        rerun_text = json.dumps(run_result_to_dict(second), indent=2, sort_keys=True) + "\n"
        trace_text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in first.trace)
        rerun_trace = "".join(json.dumps(r, sort_keys=True) + "\n" for r in second.trace)
        rerun_ok = results_text == rerun_text and trace_text == rerun_trace

        golden_results = (DATA_DIR / "golden_results.json").read_text()
        golden_trace = (DATA_DIR / "golden_trace.jsonl").read_text()
        golden_ok = results_text == golden_results and trace_text == golden_trace
        report(
            "serialization-bit-exact",
            line_ok and rerun_ok and golden_ok,
            f"line={line_ok} rerun={rerun_ok} golden={golden_ok}",
        )


class TestDecompositionRoundTrip:
    def test_thirty_templated_expressions(self, scenario_suite):
        checked = 0
        failures = []
        for scenario in scenario_suite[:30]:
            text, expected = scripted_expression(scenario.spec)
            got = heuristic_decompose(text)
            checked += 1
            if got != expected:
                failures.append(text)
        report(
            "decomposition-round-trip",
            checked >= 30 and not failures,
            f"checked={checked} failures={failures[:3]}",
        )


class TestPoseVerifierProperties:
    def test_scaling_invariance_and_activation_table(self):
        rng = np.random.default_rng(31337)
        scaling_ok = True
        for _ in range(1000):
            vectors = rng.normal(size=(4, 8))
            text = rng.normal(size=8)
            sims = vectors @ text / (
                np.linalg.norm(vectors, axis=1) * np.linalg.norm(text)
            )
            scales = rng.uniform(0.01, 50.0, size=4)
            scaled = (vectors * scales[:, None]) @ text / (
                np.linalg.norm(vectors * scales[:, None], axis=1) * np.linalg.norm(text)
            )
            scaling_ok &= int(np.argmax(sims)) == int(np.argmax(scaled))

        def candidates(n):
            return [
                Trajectory(
                    id=i,
                    category="cat",
                    keyframe_states={
                        0: TrackState(
                            Box2D(0, 0, 1, 1),
                            BinaryMask.empty(4, 4),
                            1.0,
                            "a",
                        )
                    },
                )
                for i in range(n)
            ]

        table_ok = True
        for n in range(1, 6):
            for count in range(1, 4):
                for posture in ("", "standing"):
                    expected = n > count and bool(posture)
                    table_ok &= should_activate(candidates(n), count, posture) is expected
        report(
            "pose-verifier-properties",
            scaling_ok and table_ok,
            f"scaling={scaling_ok} table={table_ok}",
        )
