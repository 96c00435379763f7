"""Boxes, points and run-length encoded binary masks.

All values are immutable after construction; every operation is a pure
function, so instances are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Two masks or mask sequences do not share the same geometry."""


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("point coordinates must be finite")


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box in continuous pixel coordinates, origin top-left."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        for v in (self.xmin, self.ymin, self.xmax, self.ymax):
            if not math.isfinite(v):
                raise ValueError("box coordinates must be finite")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "Box2D":
        return Box2D(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)

    def corners(self) -> tuple[Point2D, Point2D, Point2D, Point2D]:
        return (
            Point2D(self.xmin, self.ymin),
            Point2D(self.xmax, self.ymin),
            Point2D(self.xmax, self.ymax),
            Point2D(self.xmin, self.ymax),
        )

    def rounded(self) -> tuple[int, int, int, int]:
        """Integer coordinates, halves rounded away from zero."""
        return (
            round_half_away(self.xmin),
            round_half_away(self.ymin),
            round_half_away(self.xmax),
            round_half_away(self.ymax),
        )

    @staticmethod
    def from_points(xs: Iterable[float], ys: Iterable[float]) -> "Box2D":
        xs = list(xs)
        ys = list(ys)
        return Box2D(min(xs), min(ys), max(xs), max(ys))


def box_iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two boxes; 0.0 when the union is empty."""
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_centroid(b: Box2D) -> Point2D:
    return Point2D((b.xmin + b.xmax) / 2.0, (b.ymin + b.ymax) / 2.0)


def centroid_distance(a: Box2D, b: Box2D) -> float:
    ca, cb = box_centroid(a), box_centroid(b)
    return math.hypot(ca.x - cb.x, ca.y - cb.y)


# COCO-style compressed RLE strings: 5 data bits per character, bit 0x20 as
# continuation, characters offset by 48; counts from the fourth onward are
# stored as deltas against the count two places back.


def _counts_to_coco_string(counts: Sequence[int]) -> str:
    chars: list[str] = []
    for i, count in enumerate(counts):
        x = count - counts[i - 2] if i > 2 else count
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


def _counts_from_coco_string(text: str) -> list[int]:
    counts: list[int] = []
    pos = 0
    while pos < len(text):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(text[pos]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


@dataclass(frozen=True)
class BinaryMask:
    """Column-major run-length encoded bitmap.

    ``runs`` alternates zero-count/one-count starting with the count of
    zeros, over the column-major (Fortran) raveling of the bitmap. The
    leading count may be zero; all later counts are positive.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("mask dimensions must be positive")
        if not self.runs:
            raise ValueError("runs may not be empty")
        if any(r < 0 for r in self.runs):
            raise ValueError("runs must be non-negative")
        if any(r == 0 for r in self.runs[1:]):
            raise ValueError("only the leading run may be zero")
        if sum(self.runs) != self.width * self.height:
            raise ValueError("runs must cover exactly width*height pixels")

    @staticmethod
    def from_array(pixels: np.ndarray) -> "BinaryMask":
        """Encode a (height, width) array; nonzero entries are set pixels."""
        arr = np.asarray(pixels)
        if arr.ndim != 2:
            raise ValueError("mask array must be 2-D")
        flat = (arr != 0).ravel(order="F")
        n = flat.size
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [n]))
        runs = np.diff(bounds)
        if flat[0]:
            runs = np.concatenate(([0], runs))
        h, w = arr.shape
        return BinaryMask(int(w), int(h), tuple(int(r) for r in runs))

    @staticmethod
    def empty(width: int, height: int) -> "BinaryMask":
        return BinaryMask(width, height, (width * height,))

    @cached_property
    def pixels(self) -> np.ndarray:
        """Decoded (height, width) boolean array."""
        values = np.zeros(len(self.runs), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, np.asarray(self.runs, dtype=np.int64))
        arr = flat.reshape((self.height, self.width), order="F")
        arr.setflags(write=False)
        return arr

    @property
    def count(self) -> int:
        """Number of set pixels."""
        return int(sum(self.runs[1::2]))

    @property
    def is_empty(self) -> bool:
        return self.count == 0

    def bounding_box(self) -> Box2D | None:
        """Tight box around set pixels, or None for an empty mask."""
        if self.is_empty:
            return None
        ys, xs = np.nonzero(self.pixels)
        return Box2D(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    def to_coco(self) -> dict:
        """Wire form: ``{"size": [height, width], "counts": <string>}``."""
        return {"size": [self.height, self.width], "counts": _counts_to_coco_string(self.runs)}

    @staticmethod
    def from_coco(obj: dict) -> "BinaryMask":
        h, w = obj["size"]
        counts = _counts_from_coco_string(obj["counts"])
        return BinaryMask(int(w), int(h), tuple(counts))


@dataclass(frozen=True)
class MaskSequence:
    """One mask per video frame; all frames share a resolution."""

    video_id: str
    frames: tuple[BinaryMask, ...]

    def __post_init__(self) -> None:
        sizes = {(m.width, m.height) for m in self.frames}
        if len(sizes) > 1:
            raise ShapeMismatchError(f"inconsistent mask sizes: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.frames)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Pixel IoU of two same-sized masks; 1.0 when both are empty."""
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeMismatchError(
            f"mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if a.is_empty and b.is_empty:
        return 1.0
    pa, pb = a.pixels, b.pixels
    inter = int(np.logical_and(pa, pb).sum())
    union = int(np.logical_or(pa, pb).sum())
    return inter / union


def translate_mask(mask: BinaryMask, dx: int, dy: int) -> BinaryMask:
    """Shift set pixels by an integral offset, dropping pixels that leave the image."""
    for name, v in (("dx", dx), ("dy", dy)):
        if isinstance(v, float) and not v.is_integer():
            raise ValueError(f"{name} must be integral, got {v}")
    dx, dy = int(dx), int(dy)
    if dx == 0 and dy == 0:
        return mask
    w, h = mask.width, mask.height
    out = np.zeros((h, w), dtype=bool)
    src = mask.pixels
    sy0, sy1 = max(0, -dy), min(h, h - dy)
    sx0, sx1 = max(0, -dx), min(w, w - dx)
    if sy0 < sy1 and sx0 < sx1:
        out[sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = src[sy0:sy1, sx0:sx1]
    return BinaryMask.from_array(out)


def union_masks(masks: Sequence[BinaryMask], width: int, height: int) -> BinaryMask:
    """Pixelwise union; an empty input list yields an empty mask."""
    if not masks:
        return BinaryMask.empty(width, height)
    acc = np.zeros((height, width), dtype=bool)
    for m in masks:
        if (m.width, m.height) != (width, height):
            raise ShapeMismatchError("union over differently sized masks")
        acc |= m.pixels
    return BinaryMask.from_array(acc)
