"""Forward warping of a frame with metric depth into another viewpoint.

Every source pixel with valid depth is lifted to 3D, projected into the target
camera and splatted onto its nearest target pixel. Where several splats land on
the same pixel the one nearest to the target camera wins, and exact depth ties
go to the smaller row-major source index. Uncovered pixels are holes: black
colour, mask 0 and depth 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Intrinsics, Pose, backproject, project, valid_depth


@dataclass
class WarpedFrame:
    image: np.ndarray
    mask: np.ndarray      # uint8, 1 where a splat landed
    zbuffer: np.ndarray   # target-view depth of the winning splat, 0 in holes

    @property
    def coverage(self) -> int:
        return int(self.mask.sum())


@dataclass
class SplatRecord:
    """Every splat that landed inside the target image, for z-buffer checks."""
    target: np.ndarray   # flat target pixel index
    depth: np.ndarray
    source: np.ndarray   # flat source pixel index
    won: np.ndarray      # bool


def splat(colors, target, depth, source, shape, debug=False):
    """Resolve splats onto an ``(h, w)`` grid.

    Inputs may come in any order; the winner per target pixel is the smallest
    ``(depth, source)`` pair, so the result never depends on traversal order.
    """
    h, w = shape
    colors = np.asarray(colors, dtype=np.float64)
    order = np.lexsort((source, depth, target))
    tgt = target[order]
    first = np.ones(len(tgt), bool)
    first[1:] = tgt[1:] != tgt[:-1]
    win = order[first]

    nch = colors.shape[1]
    image = np.zeros((h * w, nch))
    mask = np.zeros(h * w, np.uint8)
    zbuf = np.zeros(h * w)
    image[target[win]] = colors[win]
    mask[target[win]] = 1
    zbuf[target[win]] = depth[win]
    out = WarpedFrame(image.reshape(h, w, nch), mask.reshape(h, w), zbuf.reshape(h, w))
    if not debug:
        return out
    won = np.zeros(len(target), bool)
    won[win] = True
    return out, SplatRecord(target, depth, source, won)


def forward_warp(src: np.ndarray, depth: np.ndarray, src_pose: Pose, dst_pose: Pose, k: Intrinsics,
                 debug: bool = False):
    """Warp ``src`` (with camera depth ``depth``) from ``src_pose`` into ``dst_pose``.

    With ``debug=True`` a :class:`SplatRecord` of all in-image splats is
    returned alongside the frame.
    """
    src = np.asarray(src, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if src.ndim == 2:
        src = src[..., None]
    h, w = k.shape
    if depth.shape != src.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match image shape {src.shape[:2]}")
    if depth.shape != (h, w):
        raise ValueError(f"frame is {depth.shape[1]}x{depth.shape[0]} but intrinsics say {w}x{h}")

    ok = valid_depth(depth)
    rows, cols = np.nonzero(ok)
    pix = np.stack([cols, rows], axis=-1).astype(np.float64)
    world = backproject(pix, depth[rows, cols], src_pose, k)
    tpix, z, front = project(world, dst_pose, k)

    u = np.floor(tpix[:, 0] + 0.5)
    v = np.floor(tpix[:, 1] + 0.5)
    inside = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    target = (v[inside] * w + u[inside]).astype(np.int64)
    source = (rows * w + cols)[inside]
    return splat(src[rows[inside], cols[inside]], target, z[inside], source, (h, w), debug)


def warp_video(frames, dst_poses, k: Intrinsics) -> list:
    """Warp each ``(image, depth, pose)`` in ``frames`` to the pose at the same index."""
    frames, dst_poses = list(frames), list(dst_poses)
    if len(frames) != len(dst_poses):
        raise ValueError(f"{len(frames)} frames but {len(dst_poses)} target poses")
    return [forward_warp(img, d, p, q, k) for (img, d, p), q in zip(frames, dst_poses)]
