"""Video inpainting behind a small backend interface.

A backend is any callable taking an :class:`InpaintRequest` and returning a
list of completed frames. :func:`inpaint` runs it over overlapping windows and
always restores the valid pixels afterwards, so a backend only decides what
goes into the holes.
"""
from __future__ import annotations

import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .formats import read_ppm, write_mask, write_ppm
from .geom import Intrinsics

DEFAULT_WINDOW = 16
DEFAULT_OVERLAP = 4
RELAX_SWEEPS = 4


class InpaintError(RuntimeError):
    pass


@dataclass
class InpaintRequest:
    masked_video: list
    masks: list
    anchor_video: list
    # timestamps of the frames and the camera each was warped to; only the oracle backend needs them
    frame_indices: list | None = None
    poses: list | None = None

    def __post_init__(self):
        self.masked_video = [np.asarray(f, dtype=np.float64) for f in self.masked_video]
        self.masks = [np.asarray(m).astype(np.uint8) for m in self.masks]
        self.anchor_video = [np.asarray(f, dtype=np.float64) for f in self.anchor_video]
        T = len(self.masked_video)
        if T == 0:
            raise ValueError("empty inpainting request")
        if len(self.masks) != T or len(self.anchor_video) != T:
            raise ValueError(f"request lengths differ: {T} frames, {len(self.masks)} masks, "
                             f"{len(self.anchor_video)} anchors")
        shape = self.masked_video[0].shape
        for i, (f, m, a) in enumerate(zip(self.masked_video, self.masks, self.anchor_video)):
            if f.shape != shape or a.shape != shape or m.shape != shape[:2]:
                raise ValueError(f"frame {i}: shapes {f.shape}, {m.shape}, {a.shape} do not match {shape}")
        if self.frame_indices is None:
            self.frame_indices = list(range(T))
        if len(self.frame_indices) != T or (self.poses is not None and len(self.poses) != T):
            raise ValueError("frame_indices and poses must have one entry per frame")

    def __len__(self):
        return len(self.masked_video)

    def slice(self, start: int, end: int) -> "InpaintRequest":
        return replace(self, masked_video=self.masked_video[start:end], masks=self.masks[start:end],
                       anchor_video=self.anchor_video[start:end],
                       frame_indices=self.frame_indices[start:end],
                       poses=None if self.poses is None else self.poses[start:end])


@dataclass
class InpaintResult:
    video: list


# ------------------------------------------------------------------ chunking


def chunk_schedule(total_frames: int, window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP):
    """``(start, end, fresh_start)`` windows; each one re-reads the last ``overlap`` frames."""
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    if not window > overlap >= 0:
        raise ValueError(f"need window > overlap >= 0, got window={window}, overlap={overlap}")
    out = [(0, min(window, total_frames), 0)]
    while out[-1][1] < total_frames:
        prev_end = out[-1][1]
        start = prev_end - overlap
        out.append((start, min(start + window, total_frames), prev_end))
    return out


# ------------------------------------------------------------------ backends


def _smooth(x: np.ndarray, step: int) -> np.ndarray:
    # [1, 2, 1] / 4 with taps ``step`` apart, along both image axes
    taps = np.zeros(2 * step + 1)
    taps[[0, step, 2 * step]] = (0.25, 0.5, 0.25)
    x = correlate1d(x, taps, axis=0, mode="constant", cval=0.0)
    return correlate1d(x, taps, axis=1, mode="constant", cval=0.0)


def _cross_mean(x: np.ndarray, step: int) -> np.ndarray:
    """Mean of the in-image neighbours ``step`` pixels up, down, left and right.

    Also returns where at least one such neighbour exists.
    """
    acc = np.zeros_like(x)
    cnt = np.zeros(x.shape[:2])
    h, w = x.shape[:2]
    for axis in (0, 1):
        n = (h, w)[axis]
        if step >= n:
            continue
        lo = [slice(None)] * 2
        hi = [slice(None)] * 2
        lo[axis], hi[axis] = slice(0, n - step), slice(step, n)
        lo, hi = tuple(lo), tuple(hi)
        acc[lo] += x[hi]
        acc[hi] += x[lo]
        cnt[lo] += 1
        cnt[hi] += 1
    return acc / np.maximum(cnt, 1)[..., None], cnt > 0


def pullpush_fill(image: np.ndarray, mask: np.ndarray, fallback=None) -> np.ndarray:
    """Fill mask-0 pixels from progressively wider normalised averages of valid ones.

    The pyramid is undecimated: level ``l`` averages with taps ``2**l`` apart
    at full resolution, so the fill does not depend on where the image grid
    starts. A hole first takes its value from the finest level at which some
    valid pixel reaches it; a few relaxation sweeps per level, coarse to fine,
    then smooth the fill towards a harmonic one. ``fallback`` (default black)
    fills a frame with no valid pixel at all.
    """
    image = np.asarray(image, dtype=np.float64)
    valid = np.asarray(mask).astype(bool)
    color = image if image.ndim == 3 else image[..., None]
    if valid.all():
        return image.copy()
    if not valid.any():
        fill = np.zeros(color.shape[-1]) if fallback is None else np.asarray(fallback, float)
        out = np.broadcast_to(fill, color.shape).copy()
        return out if image.ndim == 3 else out[..., 0]

    out = np.where(valid[..., None], color, 0.0)
    hole = ~valid
    todo = hole.copy()
    val, w = out.copy(), valid.astype(np.float64)
    step = 1
    steps = []
    while todo.any():
        steps.append(step)
        num = np.stack([_smooth(val[..., c] * w, step) for c in range(color.shape[-1])], axis=-1)
        den = _smooth(w, step)
        reached = den > 1e-12
        val = np.where(reached[..., None], num / np.where(reached, den, 1.0)[..., None], 0.0)
        w = reached.astype(np.float64)
        got = todo & reached
        out[got] = val[got]
        todo &= ~reached
        step *= 2
    # relax the holes towards the mean of their 4 neighbours, coarse spacing first
    for step in reversed(steps):
        for _ in range(RELAX_SWEEPS):
            nb, has = _cross_mean(out, step)
            upd = hole & has
            out[upd] = nb[upd]
    return out if image.ndim == 3 else out[..., 0]


def backend_pullpush(request: InpaintRequest) -> list:
    return [pullpush_fill(f, m, fallback=a.reshape(-1, a.shape[-1]).mean(axis=0) if a.ndim == 3 else a.mean())
            for f, m, a in zip(request.masked_video, request.masks, request.anchor_video)]


class OracleBackend:
    """Perfect inpainter for a synthetic scene: holes get the ray-cast render."""

    def __init__(self, scene, k: Intrinsics):
        self.scene = scene
        self.k = k

    def __call__(self, request: InpaintRequest) -> list:
        from .synth import render
        if request.poses is None:
            raise InpaintError("the oracle backend needs the pose of every frame")
        out = []
        for i, (t, pose) in enumerate(zip(request.frame_indices, request.poses)):
            if not 0 <= t < self.scene.duration:
                raise InpaintError(f"frame {i}: timestamp {t} outside the scene's [0, {self.scene.duration})")
            img, _ = render(self.scene, pose, self.k, float(t))
            if img.shape != request.masked_video[i].shape:
                raise InpaintError(f"frame {i}: render shape {img.shape} does not match the request")
            out.append(img)
        return out


def backend_oracle(request: InpaintRequest, scene, dst_poses, k: Intrinsics) -> InpaintResult:
    dst_poses = list(dst_poses)
    if len(dst_poses) != len(request):
        raise InpaintError(f"{len(dst_poses)} poses for {len(request)} frames")
    req = replace(request, poses=dst_poses)
    return InpaintResult(_restore(req, OracleBackend(scene, k)(req)))


class ExternalBackend:
    """Runs ``cmd <workdir>`` on a directory of PPM/PGM frames and reads back ``out_%04d.ppm``."""

    def __init__(self, cmd: str, window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP):
        self.cmd = shlex.split(cmd)
        self.window = window
        self.overlap = overlap
        if not self.cmd:
            raise ValueError("empty external backend command")

    def __call__(self, request: InpaintRequest) -> list:
        h, w = request.masks[0].shape
        with tempfile.TemporaryDirectory(prefix="inpaint_") as tmp:
            d = Path(tmp)
            for i, (f, m, a) in enumerate(zip(request.masked_video, request.masks, request.anchor_video)):
                (d / f"frame_{i:04d}.ppm").write_bytes(write_ppm(f))
                (d / f"mask_{i:04d}.pgm").write_bytes(write_mask(m))
                (d / f"anchor_{i:04d}.ppm").write_bytes(write_ppm(a))
            meta = {"T": len(request), "width": w, "height": h,
                    "window": self.window, "overlap": self.overlap}
            (d / "request.json").write_text(json.dumps(meta, indent=2))
            proc = subprocess.run(self.cmd + [str(d)], capture_output=True, text=True)
            if proc.returncode != 0:
                raise InpaintError(f"external backend exited with {proc.returncode}: {proc.stderr.strip()}")
            out = []
            for i in range(len(request)):
                p = d / f"out_{i:04d}.ppm"
                if not p.exists():
                    raise InpaintError(f"frame {i}: external backend wrote no {p.name}")
                img = read_ppm(p.read_bytes())
                if img.shape[:2] != (h, w):
                    raise InpaintError(f"frame {i}: external output is {img.shape[1]}x{img.shape[0]}")
                if request.masked_video[i].ndim == 2:
                    img = img.mean(axis=-1)
                elif img.shape[2] != request.masked_video[i].shape[2]:
                    img = np.broadcast_to(img.mean(axis=-1, keepdims=True), request.masked_video[i].shape)
                out.append(img)
            return out


BACKENDS = {"pullpush": backend_pullpush}


def resolve_backend(choice, scene=None, k: Intrinsics | None = None):
    """Backend from a callable or a name: ``pullpush``, ``oracle`` or ``extern:<cmd>``."""
    if callable(choice):
        return choice
    if choice in BACKENDS:
        return BACKENDS[choice]
    if choice == "oracle":
        if scene is None or k is None:
            raise ValueError("the oracle backend needs a synthetic scene and intrinsics")
        return OracleBackend(scene, k)
    if isinstance(choice, str) and choice.startswith("extern:"):
        return ExternalBackend(choice[len("extern:"):])
    raise ValueError(f"unknown inpainting backend {choice!r}")


# ------------------------------------------------------------------ driver


def _restore(request: InpaintRequest, frames) -> list:
    out = []
    for i, (f, m, src) in enumerate(zip(frames, request.masks, request.masked_video)):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != src.shape:
            raise InpaintError(f"frame {i}: backend returned shape {f.shape}, expected {src.shape}")
        keep = m.astype(bool)
        out.append(np.where(keep[..., None] if f.ndim == 3 else keep, src, f))
    return out


def inpaint(request: InpaintRequest, backend="pullpush", window: int = DEFAULT_WINDOW,
            overlap: int = DEFAULT_OVERLAP) -> InpaintResult:
    """Complete the holes of ``request`` window by window.

    Each window after the first sees the previous window's completed overlap
    frames as its input (with their original masks), and its own output for
    those frames replaces the earlier one.
    """
    fn = resolve_backend(backend)
    video = [f.copy() for f in request.masked_video]
    for start, end, _ in chunk_schedule(len(request), window, overlap):
        part = request.slice(start, end)
        part.masked_video = video[start:end]
        try:
            frames = fn(part)
        except InpaintError:
            raise
        except Exception as e:
            raise InpaintError(f"backend failed on frames [{start}, {end}): {e}") from e
        if len(frames) != end - start:
            raise InpaintError(f"backend returned {len(frames)} frames for [{start}, {end})")
        video[start:end] = _restore(part, frames)
    return InpaintResult(video)
