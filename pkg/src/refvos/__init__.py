"""Language-referred video object segmentation over precomputed perception.

The engine turns a referring expression and a directory of per-keyframe
detections into a per-frame binary mask sequence for the referred objects,
using trajectory association, camera-motion compensation, motion reasoning
(remote language model or deterministic fallback) and optional
embedding-based posture verification.
"""

__version__ = "0.1.0"
