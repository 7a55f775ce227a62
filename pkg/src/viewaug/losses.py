"""Masked reconstruction losses and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11x11 window
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class IVLoss(NamedTuple):
    value: float
    argmin: np.ndarray  # (H, W, 2) winning (dy, dx) per pixel, zero outside the mask
    empty: bool


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_s: float = 0.2
    lambda_l: float = 0.0

    def __post_init__(self):
        for name in ("lambda_r", "lambda_s", "lambda_l"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _channels(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def _check(a: np.ndarray, b: np.ndarray, mask) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    m = np.asarray(mask).astype(bool)
    if m.shape != a.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    return m


def iv_loss(rendered, target, mask, radius: int = 1) -> IVLoss:
    """Masked L1 where each rendered pixel is compared with its best match in
    a ``(2r+1)^2`` neighbourhood of the target.

    Per-pixel distance is the channel mean of absolute differences. Only the
    target is searched. Ties go to the first offset in row-major order.
    """
    a, b = _channels(rendered), _channels(target)
    m = _check(a, b, mask)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    h, w = m.shape
    best = np.full((h, w), np.inf)
    arg = np.zeros((h, w, 2), dtype=np.int64)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            # pixel p compares against target(p + o); only in-bounds p + o count
            ys, yd = slice(max(0, -dy), min(h, h - dy)), slice(max(0, dy), min(h, h + dy))
            xs, xd = slice(max(0, -dx), min(w, w - dx)), slice(max(0, dx), min(w, w + dx))
            d = np.full((h, w), np.inf)
            d[ys, xs] = np.abs(a[ys, xs] - b[yd, xd]).mean(axis=-1)
            better = d < best
            best[better] = d[better]
            arg[better] = (dy, dx)
    arg[~m] = 0
    n = int(m.sum())
    if n == 0:
        return IVLoss(0.0, arg, True)
    return IVLoss(float(best[m].sum() / n), arg, False)


def masked_l1(a, b, mask) -> float:
    a, b = _channels(a), _channels(b)
    m = _check(a, b, mask)
    if not m.any():
        return 0.0
    return float(np.abs(a - b).mean(axis=-1)[m].mean())


def _window_mean(x: np.ndarray, norm: np.ndarray) -> np.ndarray:
    return gaussian_filter(x, SSIM_SIGMA, mode="constant", cval=0.0, truncate=SSIM_RADIUS / SSIM_SIGMA) / norm


def masked_ssim(a, b, mask) -> float:
    """SSIM of ``a * mask`` against ``b * mask``.

    The Gaussian window is renormalised where it overhangs the border, so
    images smaller than the window still work.
    """
    a, b = _channels(a), _channels(b)
    m = _check(a, b, mask)
    a = a * m[..., None]
    b = b * m[..., None]
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    norm = _window_mean(np.ones(m.shape), 1.0)
    scores = []
    for c in range(a.shape[-1]):
        x, y = a[..., c], b[..., c]
        mx, my = _window_mean(x, norm), _window_mean(y, norm)
        vx = _window_mean(x * x, norm) - mx * mx
        vy = _window_mean(y * y, norm) - my * my
        cov = _window_mean(x * y, norm) - mx * my
        s = ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        scores.append(s.mean())
    return float(np.clip(np.mean(scores), -1.0, 1.0))


def masked_psnr(a, b, mask) -> float:
    """PSNR over mask-valid pixels, peak 1.0. Returns ``inf`` when they agree exactly."""
    a, b = _channels(a), _channels(b)
    m = _check(a, b, mask)
    if not m.any():
        raise ValueError("masked_psnr needs at least one valid pixel")
    mse = float(((a - b) ** 2)[m].mean())
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


Perceptual = Callable[[np.ndarray, np.ndarray], float]


def augmented_objective(rendered, target, supervision_mask, weights: LossWeights = LossWeights(),
                        perceptual: Perceptual | None = None, radius: int = 1) -> float:
    total = 0.0
    if weights.lambda_r:
        total += weights.lambda_r * iv_loss(rendered, target, supervision_mask, radius).value
    if weights.lambda_s:
        total += weights.lambda_s * (1.0 - masked_ssim(rendered, target, supervision_mask))
    if weights.lambda_l and perceptual is not None:
        a, b = _channels(rendered), _channels(target)
        m = _check(a, b, supervision_mask)[..., None]
        total += weights.lambda_l * float(perceptual(a * m, b * m))
    return float(total)
