"""Region similarity (J), contour accuracy (F) and their mean.

J is the per-frame mask IoU averaged over the video; F is a boundary
F-measure where boundary pixels match within a small radius scaled to the
image diagonal. Frames where prediction and ground truth are both empty
count as correct for both metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import BinaryMask, MaskSequence, ShapeMismatchError, mask_iou


@dataclass(frozen=True)
class EvalReport:
    j_mean: float
    f_mean: float
    jf_mean: float
    per_frame_j: tuple[float, ...]
    per_frame_f: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "j_mean": self.j_mean,
            "f_mean": self.f_mean,
            "jf_mean": self.jf_mean,
            "per_frame_j": list(self.per_frame_j),
            "per_frame_f": list(self.per_frame_f),
        }


def boundary_match_radius(width: int, height: int) -> int:
    """Default matching radius: ceil of 0.8% of the image diagonal."""
    return int(math.ceil(0.008 * math.hypot(width, height)))


def _check_pair(pred: MaskSequence, gt: MaskSequence) -> None:
    if len(pred) != len(gt):
        raise ShapeMismatchError(f"length mismatch: {len(pred)} vs {len(gt)}")
    for p, g in zip(pred.frames, gt.frames):
        if (p.width, p.height) != (g.width, g.height):
            raise ShapeMismatchError(
                f"frame size mismatch: {p.width}x{p.height} vs {g.width}x{g.height}"
            )


def jf_mean(j: float, f: float) -> float:
    return (j + f) / 2.0


def region_similarity(pred: MaskSequence, gt: MaskSequence) -> float:
    """Mean per-frame mask IoU."""
    _check_pair(pred, gt)
    scores = per_frame_region_similarity(pred, gt)
    return float(np.mean(scores)) if scores else 1.0


def per_frame_region_similarity(pred: MaskSequence, gt: MaskSequence) -> list[float]:
    _check_pair(pred, gt)
    return [mask_iou(p, g) for p, g in zip(pred.frames, gt.frames)]


def _boundary_pixels(mask: BinaryMask) -> np.ndarray:
    """Set pixels with an unset 4-neighbour, or lying on the image border."""
    px = mask.pixels
    padded = np.pad(px, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return px & ~interior


def boundary_f_measure(pred: BinaryMask, gt: BinaryMask, radius: int) -> float:
    """Single-frame boundary F-measure with Euclidean matching radius."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ShapeMismatchError("boundary measure needs same-sized masks")
    pb = _boundary_pixels(pred)
    gb = _boundary_pixels(gt)
    p_any, g_any = bool(pb.any()), bool(gb.any())
    if not p_any and not g_any:
        return 1.0
    if p_any != g_any:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~gb)
    dist_to_pred = ndimage.distance_transform_edt(~pb)
    precision = float((dist_to_gt[pb] <= radius).mean())
    recall = float((dist_to_pred[gb] <= radius).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_frame_contour_accuracy(
    pred: MaskSequence, gt: MaskSequence, radius: int | None = None
) -> list[float]:
    _check_pair(pred, gt)
    scores = []
    for p, g in zip(pred.frames, gt.frames):
        r = boundary_match_radius(p.width, p.height) if radius is None else radius
        scores.append(boundary_f_measure(p, g, r))
    return scores


def contour_accuracy(pred: MaskSequence, gt: MaskSequence, radius: int | None = None) -> float:
    """Mean per-frame boundary F-measure."""
    scores = per_frame_contour_accuracy(pred, gt, radius)
    return float(np.mean(scores)) if scores else 1.0


def evaluate_masks(pred: MaskSequence, gt: MaskSequence, radius: int | None = None) -> EvalReport:
    per_j = per_frame_region_similarity(pred, gt)
    per_f = per_frame_contour_accuracy(pred, gt, radius)
    j = float(np.mean(per_j)) if per_j else 1.0
    f = float(np.mean(per_f)) if per_f else 1.0
    return EvalReport(
        j_mean=j,
        f_mean=f,
        jf_mean=jf_mean(j, f),
        per_frame_j=tuple(per_j),
        per_frame_f=tuple(per_f),
    )
