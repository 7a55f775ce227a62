"""Per-frame scale/shift alignment of relative depth against a sparse metric cloud.

Candidates come from least-squares fits on random 10-point samples; each one is
scored by the Chamfer distance between the back-projected aligned depth map
and the sparse points seen in the frame, and the lowest score wins.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .formats import SparsePoints
from .geom import Intrinsics, Pose, project, valid_depth

MASK64 = (1 << 64) - 1

RANSAC_ITERATIONS = 100
SAMPLE_SIZE = 10
DEFAULT_STRIDE = 8


class InsufficientObservationsError(ValueError):
    pass


class SingularFitError(ValueError):
    pass


class AlignmentFailedError(RuntimeError):
    pass


# ------------------------------------------------------------------ sampler


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    """xorshift64* generator.

    Update rule: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` (mod 2**64),
    output ``x * 0x2545F4914F6CDD1D`` (mod 2**64). Streams for a RANSAC
    candidate are seeded with ``splitmix64(seed ^ splitmix64(index))`` so each
    candidate can be drawn independently of the others.
    """

    def __init__(self, state: int):
        self.state = (state & MASK64) or 1

    @classmethod
    def for_candidate(cls, seed: int, index: int) -> "XorShift64Star":
        return cls(splitmix64((seed & MASK64) ^ splitmix64(index)))

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def sample(self, n: int, m: int) -> list[int]:
        """``m`` distinct indices from ``range(n)`` by partial Fisher-Yates (``next() % (n - i)``)."""
        if m > n:
            raise ValueError("cannot sample more items than available")
        idx = list(range(n))
        for i in range(m):
            j = i + self.next() % (n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:m]


# ------------------------------------------------------------------ types


class AffineDepthParams(NamedTuple):
    alpha: float
    beta: float

    def apply(self, rel_depth: np.ndarray) -> np.ndarray:
        """``alpha * rel + beta`` with invalid inputs and non-positive outputs set to 0."""
        rel = np.asarray(rel_depth, dtype=np.float64)
        ok = valid_depth(rel)
        d = self.alpha * np.where(ok, rel, 0.0) + self.beta
        return np.where(ok & (d > 0), d, 0.0)


@dataclass
class SparseObservations:
    pixels: np.ndarray
    metric_depth: np.ndarray
    relative_depth: np.ndarray
    points: np.ndarray

    def __len__(self):
        return len(self.metric_depth)


@dataclass
class AlignmentResult:
    params: AffineDepthParams
    depth: np.ndarray
    best_index: int
    # one (alpha, beta, chamfer) row per candidate; discarded candidates carry inf
    candidates: np.ndarray = field(repr=False)

    def __iter__(self):
        # unpacks as (params, depth)
        return iter((self.params, self.depth))


# ------------------------------------------------------------------ operations


def _nearest_index(depth_shape, pixels):
    h, w = depth_shape
    cols = np.clip(np.floor(pixels[:, 0] + 0.5).astype(np.int64), 0, w - 1)
    rows = np.clip(np.floor(pixels[:, 1] + 0.5).astype(np.int64), 0, h - 1)
    return rows, cols


def project_sparse(points, pose: Pose, k: Intrinsics, rel_depth: np.ndarray,
                   min_count: int = SAMPLE_SIZE) -> SparseObservations:
    """Sparse points that land inside the frame, paired with the relative depth under them."""
    xyz = points.xyz if isinstance(points, SparsePoints) else np.asarray(points, float).reshape(-1, 3)
    pix, z, front = project(xyz, pose, k)
    inside = front.copy()
    inside[front] = ((pix[front, 0] >= 0) & (pix[front, 0] < k.width)
                     & (pix[front, 1] >= 0) & (pix[front, 1] < k.height))
    pix, z, xyz = pix[inside], z[inside], xyz[inside]
    rows, cols = _nearest_index(rel_depth.shape, pix)
    rel = np.asarray(rel_depth, dtype=np.float64)[rows, cols]
    ok = valid_depth(rel)
    obs = SparseObservations(pix[ok], z[ok], rel[ok], xyz[ok])
    if len(obs) < min_count:
        raise InsufficientObservationsError(
            f"only {len(obs)} sparse points project into the frame, need {min_count}")
    return obs


def fit_affine_ls(relative, metric=None) -> AffineDepthParams:
    """Closed-form least squares for ``metric ≈ alpha * relative + beta``.

    Accepts either two sequences or a single sequence of ``(relative, metric)`` pairs.
    """
    if metric is None:
        pairs = np.asarray(relative, dtype=np.float64).reshape(-1, 2)
        x, y = pairs[:, 0], pairs[:, 1]
    else:
        x = np.asarray(relative, dtype=np.float64).ravel()
        y = np.asarray(metric, dtype=np.float64).ravel()
    if len(x) < 2:
        raise SingularFitError("need at least two observations")
    if np.ptp(x) <= 1e-12:
        raise SingularFitError("relative depths are all equal")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    alpha = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    return AffineDepthParams(alpha, float(ym - alpha * xm))


def _sq_nn(a: np.ndarray, b: np.ndarray, tree_b: cKDTree | None) -> np.ndarray:
    """Squared distance from each point of ``a`` to its nearest neighbour in ``b``."""
    if tree_b is None:
        tree_b = cKDTree(b, balanced_tree=False)
    _, idx = tree_b.query(a)
    return np.sum((a - b[idx]) ** 2, axis=1)


def chamfer_distance(a, b, *, tree_a=None, tree_b=None) -> float:
    """Mean squared nearest-neighbour distance, both directions, summed."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_distance needs two non-empty point sets")
    return float(np.mean(_sq_nn(a, b, tree_b)) + np.mean(_sq_nn(b, a, tree_a)))


def _grid_rays(rel_depth: np.ndarray, pose: Pose, k: Intrinsics, stride: int):
    rows, cols = np.mgrid[0:rel_depth.shape[0]:stride, 0:rel_depth.shape[1]:stride]
    rel = np.asarray(rel_depth, dtype=np.float64)[rows, cols].ravel()
    ok = valid_depth(rel)
    cam = np.stack([(cols.ravel()[ok] - k.cx) / k.fx, (rows.ravel()[ok] - k.cy) / k.fy,
                    np.ones(ok.sum())], axis=-1)
    # world point = centre + depth * dirs
    return rel[ok], cam @ pose.rotation


def align_depth_ransac(obs: SparseObservations, rel_depth: np.ndarray, pose: Pose, k: Intrinsics,
                       sparse_visible, seed: int = 0, *, iterations: int = RANSAC_ITERATIONS,
                       sample_size: int = SAMPLE_SIZE, stride: int = DEFAULT_STRIDE) -> AlignmentResult:
    """Pick the least-squares candidate whose aligned cloud best matches the sparse points."""
    if len(obs) < sample_size:
        raise InsufficientObservationsError(f"{len(obs)} observations, need {sample_size}")
    target = np.asarray(sparse_visible, dtype=np.float64).reshape(-1, 3)
    if len(target) == 0:
        raise InsufficientObservationsError("no visible sparse points to score against")
    rel_grid, dirs = _grid_rays(rel_depth, pose, k, stride)
    center = pose.center
    target_tree = cKDTree(target)

    scores = np.full((iterations, 3), np.inf)
    for i in range(iterations):
        idx = XorShift64Star.for_candidate(seed, i).sample(len(obs), sample_size)
        try:
            cand = fit_affine_ls(obs.relative_depth[idx], obs.metric_depth[idx])
        except SingularFitError:
            continue
        scores[i, :2] = cand
        if not (np.isfinite(cand.alpha) and np.isfinite(cand.beta)) or cand.alpha <= 0:
            continue
        d = cand.alpha * rel_grid + cand.beta
        keep = d > 0
        if not np.any(keep):
            continue
        cloud = center + d[keep, None] * dirs[keep]
        scores[i, 2] = chamfer_distance(cloud, target, tree_b=target_tree)

    if not np.any(np.isfinite(scores[:, 2])):
        raise AlignmentFailedError("no RANSAC candidate produced a positive scale")
    best = int(np.argmin(scores[:, 2]))
    params = AffineDepthParams(float(scores[best, 0]), float(scores[best, 1]))
    return AlignmentResult(params, params.apply(rel_depth), best, scores)


def align_frame(rel_depth: np.ndarray, pose: Pose, k: Intrinsics, sparse, seed: int = 0,
                **kwargs) -> AlignmentResult:
    """Project the sparse cloud into the frame and run :func:`align_depth_ransac`."""
    obs = project_sparse(sparse, pose, k, rel_depth)
    return align_depth_ransac(obs, rel_depth, pose, k, obs.points, seed, **kwargs)
