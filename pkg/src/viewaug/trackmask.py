"""Training masks from 2D point tracks, and the clip curation filter.

Masks use 1 for valid (tracked) pixels and 0 for holes. A pixel is valid in
frame ``t`` when it lies within a Chebyshev radius of some track point that is
visible in ``t``; everything else is a hole the inpainter must learn to fill.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .formats import TrackSet

KEEP_IF_GEQ = "keep_if_geq"
KEEP_IF_LT = "keep_if_lt"
MODES = (KEEP_IF_GEQ, KEEP_IF_LT)
DEFAULT_TAU = 0.98


def default_footprint(grid_stride: int) -> int:
    """Footprint radius that lets grid-seeded tracks tile their first frame."""
    return max(int(grid_stride) // 2, 0)


def masks_from_tracks(tracks: TrackSet, width: int, height: int, footprint_radius: int = 1) -> list:
    if footprint_radius < 0:
        raise ValueError("footprint_radius must be >= 0")
    r = int(footprint_radius)
    out = []
    for t in range(tracks.n_frames):
        seed = np.zeros((height, width), bool)
        vis = tracks.visibility[:, t].astype(bool)
        p = tracks.positions[vis, t]
        p = p[np.all(np.isfinite(p), axis=1)]
        u = np.floor(p[:, 0] + 0.5).astype(np.int64)
        v = np.floor(p[:, 1] + 0.5).astype(np.int64)
        inside = (u >= 0) & (u < width) & (v >= 0) & (v < height)
        seed[v[inside], u[inside]] = True
        if r > 0:
            seed = maximum_filter(seed, size=2 * r + 1, mode="constant", cval=False)
        out.append(seed.astype(np.uint8))
    return out


def apply_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if frame.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match frame shape {frame.shape[:2]}")
    keep = mask.astype(bool)
    return frame * (keep[..., None] if frame.ndim == 3 else keep)


def curation_ratio(masks) -> float:
    """Mean over frames of the valid-pixel fraction."""
    masks = [np.asarray(m) for m in masks]
    if not masks:
        raise ValueError("curation_ratio needs at least one mask")
    if len({m.shape for m in masks}) != 1:
        raise ValueError("masks must all have the same shape")
    return float(np.mean([np.count_nonzero(m) / m.size for m in masks]))


@dataclass(frozen=True)
class CurationReport:
    ratio: float
    kept: bool
    tau: float
    mode: str = KEEP_IF_GEQ

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "kept": self.kept, "tau": self.tau, "mode": self.mode}


def decide(ratio: float, tau: float = DEFAULT_TAU, mode: str = KEEP_IF_GEQ) -> bool:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if mode == KEEP_IF_GEQ:
        return ratio >= tau
    if mode == KEEP_IF_LT:
        return ratio < tau
    raise ValueError(f"unknown curation mode {mode!r}, expected one of {MODES}")


def curate(masks, tau: float = DEFAULT_TAU, mode: str = KEEP_IF_GEQ) -> CurationReport:
    ratio = curation_ratio(masks)
    return CurationReport(ratio, decide(ratio, tau, mode), float(tau), mode)
