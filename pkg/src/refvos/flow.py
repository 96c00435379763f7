"""Sparse feature tracking and robust affine estimation between frames.

Features are seeded on a regular grid (keeping locations with enough local
gradient) and tracked with iterative window-based flow over an image
pyramid. A RANSAC loop over minimal three-point samples, followed by a
least-squares refit on the inliers, turns the correspondences into a 2x3
affine transform mapping earlier-frame coordinates to later-frame ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Point2D

FLOW_WINDOW = 21
FLOW_MAX_ITERS = 30
FLOW_LEVELS = 3
FLOW_CONVERGENCE = 0.01
GRID_STEP = 16
GRADIENT_FLOOR = 10.0
MIN_CORRESPONDENCES = 6


class InsufficientFeaturesError(RuntimeError):
    """Too few trackable points survived seeding and convergence checks."""


class DegenerateGeometryError(ValueError):
    """The correspondences do not constrain an affine transform."""


@dataclass(frozen=True)
class Correspondence:
    prev: Point2D
    next: Point2D
    residual: float = 0.0


@dataclass(frozen=True)
class AffineTransform:
    """Row-major 2x3 coefficients ((a, b, tx), (c, d, ty))."""

    coefficients: tuple[tuple[float, float, float], tuple[float, float, float]]
    residual: float = 0.0
    inlier_count: int = 0

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)))

    @staticmethod
    def from_matrix(m: np.ndarray, residual: float = 0.0, inliers: int = 0) -> "AffineTransform":
        m = np.asarray(m, dtype=float)
        return AffineTransform(
            ((float(m[0, 0]), float(m[0, 1]), float(m[0, 2])),
             (float(m[1, 0]), float(m[1, 1]), float(m[1, 2]))),
            residual=residual,
            inlier_count=inliers,
        )

    @staticmethod
    def translation(dx: float, dy: float) -> "AffineTransform":
        return AffineTransform(((1.0, 0.0, float(dx)), (0.0, 1.0, float(dy))))

    def as_matrix(self) -> np.ndarray:
        (a, b, tx), (c, d, ty) = self.coefficients
        return np.array([[a, b, tx], [c, d, ty], [0.0, 0.0, 1.0]])

    @property
    def determinant(self) -> float:
        (a, b, _), (c, d, _) = self.coefficients
        return a * d - b * c

    @property
    def translation_part(self) -> tuple[float, float]:
        return (self.coefficients[0][2], self.coefficients[1][2])

    @property
    def scale(self) -> float:
        return math.sqrt(abs(self.determinant))

    @property
    def rotation_degrees(self) -> float:
        (a, _, _), (c, _, _) = self.coefficients
        return math.degrees(math.atan2(c, a))

    def apply(self, x: float, y: float) -> tuple[float, float]:
        (a, b, tx), (c, d, ty) = self.coefficients
        return (a * x + b * y + tx, c * x + d * y + ty)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        (a, b, tx), (c, d, ty) = self.coefficients
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[:, 0] = a * pts[:, 0] + b * pts[:, 1] + tx
        out[:, 1] = c * pts[:, 0] + d * pts[:, 1] + ty
        return out

    def compose(self, inner: "AffineTransform") -> "AffineTransform":
        """self applied after ``inner``."""
        return AffineTransform.from_matrix(self.as_matrix() @ inner.as_matrix())

    def inverse(self) -> "AffineTransform":
        det = self.determinant
        if abs(det) < 1e-12:
            raise DegenerateGeometryError("transform is not invertible")
        (a, b, tx), (c, d, ty) = self.coefficients
        ia, ib = d / det, -b / det
        ic, id_ = -c / det, a / det
        return AffineTransform(
            ((ia, ib, -(ia * tx + ib * ty)), (ic, id_, -(ic * tx + id_ * ty)))
        )

    def is_near_identity(self, tol: float = 1e-9) -> bool:
        ident = AffineTransform.identity()
        return all(
            abs(x - y) <= tol
            for rx, ry in zip(self.coefficients, ident.coefficients)
            for x, y in zip(rx, ry)
        )


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Float grayscale on the 0..255 scale (luma weights for colour input)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return arr


def _pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [image]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h2, w2 = (prev.shape[0] // 2) * 2, (prev.shape[1] // 2) * 2
        c = prev[:h2, :w2]
        pyr.append(0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2]))
    return pyr


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return v00 * (1 - wy) * (1 - wx) + v01 * (1 - wy) * wx + v10 * wy * (1 - wx) + v11 * wy * wx


def _seed_grid(gray: np.ndarray, step: int) -> np.ndarray:
    """Grid points with local gradient magnitude above the floor."""
    h, w = gray.shape
    margin = FLOW_WINDOW // 2 + 2
    xs = np.arange(margin, w - margin, step)
    ys = np.arange(margin, h - margin, step)
    if xs.size == 0 or ys.size == 0:
        return np.empty((0, 2))
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    gx_grid, gy_grid = np.meshgrid(xs, ys)
    pts = np.stack([gx_grid.ravel(), gy_grid.ravel()], axis=1).astype(np.float64)
    keep = mag[pts[:, 1].astype(int), pts[:, 0].astype(int)] >= GRADIENT_FLOOR
    return pts[keep]


def track_sparse_features(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    grid_step: int = GRID_STEP,
) -> list[Correspondence]:
    """Track grid-seeded points from ``frame_a`` into ``frame_b``.

    Raises InsufficientFeaturesError when fewer than six points survive
    seeding, window bounds and convergence checks.
    """
    ga = to_grayscale(frame_a)
    gb = to_grayscale(frame_b)
    if ga.shape != gb.shape:
        raise ValueError("frames must share a resolution")
    seeds = _seed_grid(ga, grid_step)
    if seeds.shape[0] < MIN_CORRESPONDENCES:
        raise InsufficientFeaturesError(
            f"only {seeds.shape[0]} grid points passed the gradient floor"
        )

    pyr_a = _pyramid(ga, FLOW_LEVELS)
    pyr_b = _pyramid(gb, FLOW_LEVELS)
    half = FLOW_WINDOW // 2
    oy, ox = np.mgrid[-half : half + 1, -half : half + 1]
    oy = oy.ravel()[None, :]
    ox = ox.ravel()[None, :]

    n = seeds.shape[0]
    guess = np.zeros((n, 2))
    alive = np.ones(n, dtype=bool)
    converged_final = np.zeros(n, dtype=bool)

    for level in range(FLOW_LEVELS - 1, -1, -1):
        a, b = pyr_a[level], pyr_b[level]
        h, w = a.shape
        scale = float(2**level)
        p0 = seeds / scale
        gay, gax = np.gradient(a)

        def in_bounds(pos: np.ndarray, extra: float = 1.0) -> np.ndarray:
            return (
                (pos[:, 0] >= half + extra)
                & (pos[:, 0] <= w - half - 1 - extra)
                & (pos[:, 1] >= half + extra)
                & (pos[:, 1] <= h - half - 1 - extra)
            )

        template_ok = alive & in_bounds(p0)
        if level == 0:
            alive &= in_bounds(p0)
        idx = np.flatnonzero(template_ok)
        if idx.size == 0:
            if level > 0:
                guess *= 2.0
            continue

        px = p0[idx, 0:1] + ox
        py = p0[idx, 1:2] + oy
        template = _bilinear(a, py, px)
        ix = _bilinear(gax, py, px)
        iy = _bilinear(gay, py, px)
        gxx = (ix * ix).sum(axis=1)
        gxy = (ix * iy).sum(axis=1)
        gyy = (iy * iy).sum(axis=1)
        det = gxx * gyy - gxy * gxy
        solvable = det > 1e-9
        if level == 0:
            dead = idx[~solvable]
            alive[dead] = False

        v = np.zeros((idx.size, 2))
        done = ~solvable
        for _ in range(FLOW_MAX_ITERS):
            act = np.flatnonzero(~done)
            if act.size == 0:
                break
            sub = idx[act]
            pos = p0[sub] + guess[sub] + v[act]
            ok = in_bounds(pos)
            if not ok.all():
                bad = act[~ok]
                done[bad] = True
                if level == 0:
                    alive[idx[bad]] = False
                act = act[ok]
                if act.size == 0:
                    break
                sub = idx[act]
                pos = pos[ok]
            qx = pos[:, 0:1] + ox
            qy = pos[:, 1:2] + oy
            warped = _bilinear(b, qy, qx)
            diff = template[act] - warped
            bx = (diff * ix[act]).sum(axis=1)
            by = (diff * iy[act]).sum(axis=1)
            d = det[act]
            dx = (gyy[act] * bx - gxy[act] * by) / d
            dy = (gxx[act] * by - gxy[act] * bx) / d
            v[act, 0] += dx
            v[act, 1] += dy
            small = np.hypot(dx, dy) < FLOW_CONVERGENCE
            finished = act[small]
            done[finished] = True
            if level == 0:
                converged_final[idx[finished]] = True

        guess[idx] += v
        if level > 0:
            guess *= 2.0

    keep = alive & converged_final
    result = [
        Correspondence(
            prev=Point2D(float(seeds[i, 0]), float(seeds[i, 1])),
            next=Point2D(float(seeds[i, 0] + guess[i, 0]), float(seeds[i, 1] + guess[i, 1])),
        )
        for i in np.flatnonzero(keep)
    ]
    if len(result) < MIN_CORRESPONDENCES:
        raise InsufficientFeaturesError(f"only {len(result)} correspondences converged")
    return result


def _fit_affine_lstsq(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    design = np.column_stack([prev, np.ones(len(prev))])
    sol_x, *_ = np.linalg.lstsq(design, nxt[:, 0], rcond=None)
    sol_y, *_ = np.linalg.lstsq(design, nxt[:, 1], rcond=None)
    return np.array([sol_x, sol_y])


def _triangle_area(p: np.ndarray) -> float:
    return 0.5 * abs(
        (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    )


def estimate_affine(
    correspondences: list[Correspondence],
    ransac_iters: int = 200,
    inlier_px: float = 2.0,
    rng: np.random.Generator | None = None,
) -> AffineTransform:
    """RANSAC over three-point samples, then least-squares refit on inliers.

    The returned transform carries the inlier count and the root-mean-square
    inlier residual.
    """
    if len(correspondences) < 3:
        raise ValueError(f"need at least 3 correspondences, got {len(correspondences)}")
    rng = rng or np.random.default_rng(0)
    prev = np.array([[c.prev.x, c.prev.y] for c in correspondences])
    nxt = np.array([[c.next.x, c.next.y] for c in correspondences])
    n = len(correspondences)

    best_inliers: np.ndarray | None = None
    best_score = (-1, np.inf)
    for _ in range(ransac_iters):
        sample = rng.choice(n, size=3, replace=False)
        if _triangle_area(prev[sample]) < 1e-9:
            continue
        model = _fit_affine_lstsq(prev[sample], nxt[sample])
        predicted = prev @ model[:, :2].T + model[:, 2]
        err = np.linalg.norm(predicted - nxt, axis=1)
        inliers = err < inlier_px
        count = int(inliers.sum())
        rms = float(np.sqrt(np.mean(err[inliers] ** 2))) if count else np.inf
        if (count, -rms) > (best_score[0], -best_score[1]):
            best_score = (count, rms)
            best_inliers = inliers
        if count == n and rms < 1e-9:
            break
    if best_inliers is None:
        raise DegenerateGeometryError("all sampled point triples were collinear")

    model = _fit_affine_lstsq(prev[best_inliers], nxt[best_inliers])
    predicted = prev[best_inliers] @ model[:, :2].T + model[:, 2]
    rms = float(np.sqrt(np.mean(np.sum((predicted - nxt[best_inliers]) ** 2, axis=1))))
    return AffineTransform.from_matrix(model, residual=rms, inliers=int(best_inliers.sum()))
