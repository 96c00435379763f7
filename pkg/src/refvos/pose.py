"""Posture verification by embedding similarity on discriminative keyframes.

When motion reasoning leaves more candidates than the query asks for and a
posture description exists, candidates are ranked by cosine similarity
between their aggregated crop embeddings and the posture text embedding.
Embeddings come from the bundle (or any mapping) under fixed keys:
``crop/<track_id>/<frame>`` and ``text/<digest>``.
"""

from __future__ import annotations

import hashlib
from typing import Mapping, Sequence

import numpy as np

from .geometry import box_iou
from .tracking import Trajectory


class MissingEmbeddingError(KeyError):
    """The embedding backend has no vector under the requested key."""


def crop_key(track_id: int, frame: int) -> str:
    return f"crop/{track_id}/{frame}"


def text_key(posture: str) -> str:
    digest = hashlib.sha1(posture.strip().lower().encode("utf-8")).hexdigest()[:16]
    return f"text/{digest}"


def should_activate(filtered: Sequence[Trajectory], count: int, posture: str) -> bool:
    """Verify only when candidates outnumber targets and a posture exists."""
    if not filtered:
        raise ValueError("filtered candidate list may not be empty")
    return len(filtered) > count and bool(posture.strip())


def select_discriminative_keyframes(candidates: Sequence[Trajectory], k: int) -> list[int]:
    """Keyframes where the candidates' boxes overlap least.

    Each common keyframe is scored by the maximum pairwise box IoU across
    candidates; the ``k`` lowest-scoring frames win, ties toward earlier
    frames. With fewer than ``k`` common keyframes all of them are
    returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidates:
        raise ValueError("candidates may not be empty")
    common: set[int] | None = None
    for track in candidates:
        frames = set(track.keyframe_states)
        common = frames if common is None else common & frames
    common_sorted = sorted(common or ())
    scored = []
    for frame in common_sorted:
        worst = 0.0
        for i, ta in enumerate(candidates):
            for tb in candidates[i + 1 :]:
                worst = max(
                    worst,
                    box_iou(ta.keyframe_states[frame].box, tb.keyframe_states[frame].box),
                )
        scored.append((worst, frame))
    scored.sort(key=lambda pair: (pair[0], pair[1]))
    chosen = [frame for _, frame in scored[:k]]
    return sorted(chosen)


def get_embedding(backend: Mapping[str, np.ndarray], key: str) -> np.ndarray:
    try:
        vec = backend[key]
    except KeyError as exc:
        raise MissingEmbeddingError(key) from exc
    return np.asarray(vec, dtype=np.float64)


def aggregate_visual_embedding(
    candidate: Trajectory, frames: Sequence[int], backend: Mapping[str, np.ndarray]
) -> np.ndarray:
    """Component-wise mean of the candidate's crop embeddings on ``frames``."""
    if not frames:
        raise ValueError("need at least one frame to aggregate")
    vectors = [get_embedding(backend, crop_key(candidate.id, f)) for f in frames]
    return np.mean(np.stack(vectors), axis=0)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def rank_by_similarity(
    candidates: Sequence[Trajectory],
    posture: str,
    count: int,
    backend: Mapping[str, np.ndarray],
    frames: Sequence[int] | None = None,
    k: int = 3,
) -> list[int]:
    """Candidate ids by descending cosine similarity to the posture text.

    The first ``count`` entries are the verified selection. ``frames``
    defaults to the most discriminative common keyframes.
    """
    if frames is None:
        frames = select_discriminative_keyframes(candidates, k)
    text_vec = get_embedding(backend, text_key(posture))
    scores: dict[int, float] = {}
    for track in candidates:
        visual = aggregate_visual_embedding(track, frames, backend)
        scores[track.id] = cosine_similarity(visual, text_vec)
    return sorted(scores, key=lambda tid: (-scores[tid], tid))
