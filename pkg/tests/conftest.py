from __future__ import annotations

import numpy as np
import pytest

from refvos.geometry import BinaryMask, Box2D
from refvos.bundle import DetectionRecord


def mask_from_rows(rows: list[str]) -> BinaryMask:
    """Build a mask from strings of '.' and '#', one per row."""
    arr = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
    return BinaryMask.from_array(arr)


def block_mask(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> BinaryMask:
    arr = np.zeros((height, width), dtype=bool)
    arr[y0 : y1 + 1, x0 : x1 + 1] = True
    return BinaryMask.from_array(arr)


def block_detection(
    frame: int,
    key: str,
    x0: int,
    y0: int,
    x1: int,
    y1: int,
    width: int = 200,
    height: int = 160,
    category: str = "cat",
    score: float = 0.9,
) -> DetectionRecord:
    return DetectionRecord(
        frame_index=frame,
        instance_key=key,
        category=category,
        score=score,
        box=Box2D(x0, y0, x1, y1),
        mask=block_mask(width, height, x0, y0, x1, y1),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
