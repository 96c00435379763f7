from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refvos.geometry import BinaryMask, MaskSequence, ShapeMismatchError
from refvos.metrics import (
    boundary_f_measure,
    boundary_match_radius,
    contour_accuracy,
    evaluate_masks,
    jf_mean,
    region_similarity,
)

from conftest import block_mask


# --- brute-force oracles ------------------------------------------------------


def brute_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = union = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if pred[y, x] and gt[y, x]:
                inter += 1
            if pred[y, x] or gt[y, x]:
                union += 1
    return 1.0 if union == 0 else inter / union


def brute_boundary(px: np.ndarray) -> list[tuple[int, int]]:
    h, w = px.shape
    out = []
    for y in range(h):
        for x in range(w):
            if not px[y, x]:
                continue
            if y == 0 or x == 0 or y == h - 1 or x == w - 1:
                out.append((y, x))
                continue
            if not (px[y - 1, x] and px[y + 1, x] and px[y, x - 1] and px[y, x + 1]):
                out.append((y, x))
    return out


def brute_f(pred: np.ndarray, gt: np.ndarray, radius: float) -> float:
    pb, gb = brute_boundary(pred), brute_boundary(gt)
    if not pb and not gb:
        return 1.0
    if bool(pb) != bool(gb):
        return 0.0

    def matched(points, targets):
        hits = 0
        for py, px_ in points:
            if any(math.hypot(py - ty, px_ - tx) <= radius for ty, tx in targets):
                hits += 1
        return hits / len(points)

    precision = matched(pb, gb)
    recall = matched(gb, pb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def seq(masks, vid="v") -> MaskSequence:
    return MaskSequence(vid, tuple(masks))


class TestRegionSimilarity:
    def test_equal_sequences(self):
        m = block_mask(6, 6, 1, 1, 4, 4)
        assert region_similarity(seq([m, m]), seq([m, m])) == 1.0

    def test_all_empty(self):
        e = BinaryMask.empty(6, 6)
        assert region_similarity(seq([e, e]), seq([e, e])) == 1.0

    def test_mean_over_frames(self):
        full = block_mask(4, 4, 0, 0, 3, 3)
        half = block_mask(4, 4, 0, 0, 3, 1)
        got = region_similarity(seq([full, half]), seq([full, full]))
        assert got == pytest.approx(0.75, abs=1e-12)

    def test_shape_error(self):
        with pytest.raises(ShapeMismatchError):
            region_similarity(seq([BinaryMask.empty(3, 3)]), seq([BinaryMask.empty(3, 3)] * 2))


class TestContourAccuracy:
    def test_equal_masks(self):
        m = block_mask(8, 8, 2, 2, 5, 5)
        assert contour_accuracy(seq([m]), seq([m])) == 1.0

    def test_distant_masks_zero(self):
        a = block_mask(20, 20, 0, 0, 2, 2)
        b = block_mask(20, 20, 15, 15, 18, 18)
        assert contour_accuracy(seq([a]), seq([b]), radius=1) == 0.0

    def test_shifted_square_within_radius(self):
        # 3x3 square on a 5x5 grid against a one-pixel shift, radius 1
        gt = block_mask(5, 5, 1, 1, 3, 3)
        pred = block_mask(5, 5, 2, 1, 4, 3)
        assert boundary_f_measure(pred, gt, 1) == pytest.approx(
            brute_f(pred.pixels, gt.pixels, 1), abs=1e-12
        )
        assert boundary_f_measure(pred, gt, 1) == 1.0

    def test_zero_radius_exact_match(self):
        m = block_mask(7, 7, 1, 2, 5, 5)
        assert boundary_f_measure(m, m, 0) == 1.0

    def test_one_empty_frame_scores_zero(self):
        m = block_mask(5, 5, 1, 1, 3, 3)
        e = BinaryMask.empty(5, 5)
        assert boundary_f_measure(m, e, 2) == 0.0
        assert boundary_f_measure(e, m, 2) == 0.0
        assert boundary_f_measure(e, e, 2) == 1.0

    def test_default_radius_follows_diagonal(self):
        assert boundary_match_radius(160, 120) == math.ceil(0.008 * 200)
        assert boundary_match_radius(5, 5) == 1


class TestAgainstBruteForce:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**9), st.integers(5, 16), st.integers(5, 16))
    def test_random_fixtures_match_oracle(self, seed, w, h):
        rng = np.random.default_rng(seed)
        pred = BinaryMask.from_array(rng.uniform(size=(h, w)) > 0.6)
        gt = BinaryMask.from_array(rng.uniform(size=(h, w)) > 0.6)
        radius = boundary_match_radius(w, h)
        report = evaluate_masks(seq([pred]), seq([gt]))
        assert report.j_mean == pytest.approx(brute_iou(pred.pixels, gt.pixels), abs=1e-12)
        assert report.f_mean == pytest.approx(brute_f(pred.pixels, gt.pixels, radius), abs=1e-12)


class TestJfMean:
    def test_trivial(self):
        assert jf_mean(1.0, 1.0) == 1.0
        assert jf_mean(0.0, 1.0) == 0.5

    def test_benchmark_row_arithmetic(self):
        assert jf_mean(0.492, 0.556) == pytest.approx(0.524, abs=1e-12)

    def test_report_invariant(self):
        m = block_mask(6, 6, 1, 1, 4, 4)
        e = BinaryMask.empty(6, 6)
        report = evaluate_masks(seq([m, e]), seq([m, m]))
        assert report.jf_mean == pytest.approx((report.j_mean + report.f_mean) / 2, abs=1e-12)
        for value in (*report.per_frame_j, *report.per_frame_f):
            assert 0.0 <= value <= 1.0


class TestMetricProperties:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**9))
    def test_mirror_invariance(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(size=(3, 9, 7)) > 0.6
        gt = rng.uniform(size=(3, 9, 7)) > 0.6
        fwd_p = seq([BinaryMask.from_array(a) for a in pred])
        fwd_g = seq([BinaryMask.from_array(a) for a in gt])
        mir_p = seq([BinaryMask.from_array(a[:, ::-1]) for a in pred])
        mir_g = seq([BinaryMask.from_array(a[:, ::-1]) for a in gt])
        assert region_similarity(fwd_p, fwd_g) == pytest.approx(
            region_similarity(mir_p, mir_g), abs=1e-12
        )
        assert contour_accuracy(fwd_p, fwd_g) == pytest.approx(
            contour_accuracy(mir_p, mir_g), abs=1e-12
        )

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**9), st.integers(0, 2))
    def test_fixing_a_frame_never_hurts(self, seed, frame):
        rng = np.random.default_rng(seed)
        pred = [BinaryMask.from_array(rng.uniform(size=(8, 8)) > 0.6) for _ in range(3)]
        gt = [BinaryMask.from_array(rng.uniform(size=(8, 8)) > 0.6) for _ in range(3)]
        fixed = list(pred)
        fixed[frame] = gt[frame]
        assert region_similarity(seq(fixed), seq(gt)) >= region_similarity(seq(pred), seq(gt))
        assert contour_accuracy(seq(fixed), seq(gt)) >= contour_accuracy(seq(pred), seq(gt))
