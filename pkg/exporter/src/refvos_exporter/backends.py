"""Model backends behind the exporter.

Each backend family has a registry keyed by model identifier. The
"reference" backends are deterministic classical-vision stand-ins that run
anywhere: a background-subtraction blob detector, a mask-overlap
propagator and a patch-statistics embedder. Identifiers for large
detector/segmenter/embedding checkpoints can be registered by downstream
code; asking for an unregistered identifier raises ExporterError.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage


class ExporterError(RuntimeError):
    """A backend is unavailable or failed to produce usable output."""


@dataclass(frozen=True)
class RawDetection:
    category: str
    score: float
    box: tuple[float, float, float, float]
    mask: np.ndarray  # bool (H, W)


def _luma(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 3:
        arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return arr


class ReferenceDetector:
    """Foreground blobs against a temporal-median background.

    Category-agnostic: every blob is labelled with the first vocabulary
    term. Score grows with the blob's mean contrast against the
    background, saturating at 0.95.
    """

    min_area = 25
    diff_threshold = 22.0

    def __init__(self, frames: Sequence[np.ndarray]):
        sample = frames[:: max(1, len(frames) // 12)]
        self._background = np.median(np.stack([_luma(f) for f in sample]), axis=0)

    def detect(self, frame: np.ndarray, vocabulary: Sequence[str]) -> list[RawDetection]:
        diff = np.abs(_luma(frame) - self._background)
        foreground = diff > self.diff_threshold
        labels, count = ndimage.label(foreground)
        detections = []
        for idx in range(1, count + 1):
            mask = labels == idx
            area = int(mask.sum())
            if area < self.min_area:
                continue
            ys, xs = np.nonzero(mask)
            contrast = float(diff[mask].mean())
            score = round(min(0.95, contrast / 90.0), 4)
            detections.append(
                RawDetection(
                    category=vocabulary[0],
                    score=score,
                    box=(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())),
                    mask=mask,
                )
            )
        detections.sort(key=lambda d: (-d.score, d.box))
        return detections


class ReferencePropagator:
    """Carry a mask across frames by stepwise overlap matching.

    Each step re-detects blobs on the next frame and follows the one that
    overlaps the current mask most, so slow motion is tracked over long
    horizons. Tracking stops when no blob overlaps enough.
    """

    min_overlap = 0.05

    def __init__(self, frames: Sequence[np.ndarray], detector: ReferenceDetector):
        self._frames = frames
        self._detector = detector
        self._cache: dict[int, list[RawDetection]] = {}

    def _detections(self, frame: int, vocabulary: Sequence[str]) -> list[RawDetection]:
        if frame not in self._cache:
            self._cache[frame] = self._detector.detect(self._frames[frame], vocabulary)
        return self._cache[frame]

    def _best_match(
        self, mask: np.ndarray, frame: int, vocabulary: Sequence[str]
    ) -> RawDetection | None:
        best = None
        best_overlap = 0.0
        area = max(1, int(mask.sum()))
        for cand in self._detections(frame, vocabulary):
            overlap = int(np.logical_and(mask, cand.mask).sum()) / area
            if overlap > best_overlap:
                best_overlap = overlap
                best = cand
        if best is None or best_overlap < self.min_overlap:
            return None
        return best

    def track(
        self,
        mask: np.ndarray,
        source_frame: int,
        targets: Sequence[int],
        vocabulary: Sequence[str],
    ) -> dict[int, RawDetection]:
        """Follow ``mask`` from the source frame onto each target frame."""
        results: dict[int, RawDetection] = {}
        for direction in (1, -1):
            wanted = sorted(
                (t for t in targets if (t - source_frame) * direction > 0), key=lambda t: abs(t - source_frame)
            )
            if not wanted:
                continue
            current = mask
            frame = source_frame
            while wanted:
                frame += direction
                hit = self._best_match(current, frame, vocabulary)
                if hit is None:
                    break
                current = hit.mask
                if frame == wanted[0]:
                    results[frame] = hit
                    wanted.pop(0)
        return results


class ReferenceEmbedder:
    """Patch-statistics crop embeddings and seeded text embeddings.

    Crop vectors concatenate a 4x4 mean-luma grid with the channel means;
    text vectors are unit Gaussians seeded from the text digest. Both are
    deterministic across runs.
    """

    grid = 4

    def embed_crop(self, frame: np.ndarray, box: tuple[float, float, float, float]) -> np.ndarray:
        h, w = frame.shape[:2]
        x0, y0, x1, y1 = (int(round(v)) for v in box)
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(w - 1, x1), min(h - 1, y1)
        if x1 <= x0 or y1 <= y0:
            raise ExporterError(f"crop region {box} is empty or outside the frame")
        crop = np.asarray(frame, dtype=np.float64)[y0 : y1 + 1, x0 : x1 + 1]
        luma = _luma(crop)
        cells = []
        ys = np.linspace(0, luma.shape[0], self.grid + 1).astype(int)
        xs = np.linspace(0, luma.shape[1], self.grid + 1).astype(int)
        for i in range(self.grid):
            for j in range(self.grid):
                cell = luma[ys[i] : max(ys[i] + 1, ys[i + 1]), xs[j] : max(xs[j] + 1, xs[j + 1])]
                cells.append(float(cell.mean()) / 255.0)
        if crop.ndim == 3:
            channels = [float(crop[..., c].mean()) / 255.0 for c in range(3)]
        else:
            channels = [float(luma.mean()) / 255.0] * 3
        return np.array(cells + channels)

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.strip().lower().encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.normal(size=self.grid * self.grid + 3)
        return vec / np.linalg.norm(vec)


DetectorFactory = Callable[[Sequence[np.ndarray]], ReferenceDetector]

DETECTORS: dict[str, DetectorFactory] = {"reference": ReferenceDetector}
PROPAGATORS: dict[str, Callable] = {"reference": ReferencePropagator}
EMBEDDERS: dict[str, Callable[[], ReferenceEmbedder]] = {"reference": ReferenceEmbedder}


def resolve(registry: dict, identifier: str, kind: str):
    try:
        return registry[identifier]
    except KeyError:
        raise ExporterError(
            f"{kind} backend '{identifier}' is not available; registered: {sorted(registry)}"
        ) from None
