"""Iterative view augmentation.

Starting from the input video, every iteration warps frames from the buffer
to a few not-yet-visited target poses, inpaints the holes, attaches depth to
the completed videos and appends them to the buffer. Targets are taken
nearest-first, so later iterations warp from already augmented views and each
individual warp stays small.

A global point cloud of inpainted pixels decides which pixels may supervise:
a hole pixel supervises only the first time its surface gets inpainted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import minimum_filter

from .depth_align import align_frame
from .formats import read_mask, read_pfm, read_ppm, write_mask, write_pfm, write_ppm
from .geom import Intrinsics, Pose, backproject, orbit_targets, pose_distance, project, valid_depth
from .inpaint import DEFAULT_OVERLAP, DEFAULT_WINDOW, InpaintError, InpaintRequest, inpaint, pullpush_fill
from .warp import forward_warp

PERIPHERAL_EXTREMES = "extremes"
PERIPHERAL_FARTHEST = "farthest"
DEFAULT_ITERATIONS = 6
DEFAULT_DEPTH_TOL = 0.1


class PlanError(ValueError):
    pass


class AugmentError(RuntimeError):
    pass


# ------------------------------------------------------------------ types


@dataclass
class BufferEntry:
    video: list
    depths: list
    poses: list
    iteration_born: int = 0
    # target pose index of each frame; None for the input entry
    target_indices: list | None = None

    def __post_init__(self):
        if not (len(self.video) == len(self.depths) == len(self.poses)):
            raise ValueError(f"entry lengths differ: {len(self.video)} frames, {len(self.depths)} depths, "
                             f"{len(self.poses)} poses")
        if self.target_indices is not None and len(self.target_indices) != len(self.video):
            raise ValueError("target_indices needs one entry per frame")

    def __len__(self):
        return len(self.video)


@dataclass
class DataBuffer:
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a buffer starts with the input entry")
        if self.entries[0].iteration_born != 0:
            raise ValueError("entry 0 must be the input (iteration 0)")
        born = [e.iteration_born for e in self.entries]
        if born != sorted(born):
            raise ValueError("entries must be in order of the iteration that produced them")
        if len({len(e) for e in self.entries}) != 1:
            raise ValueError("all entries must have the same frame count")

    @property
    def T(self) -> int:
        return len(self.entries[0])

    def __len__(self):
        return len(self.entries)


@dataclass
class TargetPoseSet:
    poses: list                      # poses[t][i]: target i at timestamp t
    visited: np.ndarray = None       # (T, H) bool

    def __post_init__(self):
        self.poses = [list(p) for p in self.poses]
        if not self.poses or len({len(p) for p in self.poses}) != 1 or not self.poses[0]:
            raise ValueError("need the same non-zero number of target poses at every timestamp")
        if self.visited is None:
            self.visited = np.zeros((self.T, self.H), bool)
        self.visited = np.asarray(self.visited, bool)
        if self.visited.shape != (self.T, self.H):
            raise ValueError(f"visited must have shape {(self.T, self.H)}")

    @property
    def T(self) -> int:
        return len(self.poses)

    @property
    def H(self) -> int:
        return len(self.poses[0])

    @classmethod
    def orbit(cls, input_poses, k: Intrinsics, center_depth: float, count: int,
              max_angle: float = 0.35) -> "TargetPoseSet":
        """``count`` orbit targets around each input pose."""
        return cls([orbit_targets(p, k, center_depth, count, max_angle) for p in input_poses])

    def copy(self) -> "TargetPoseSet":
        return TargetPoseSet(self.poses, self.visited.copy())


@dataclass
class GlobalPointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    # (frame index, iteration) of the pixel each point came from
    tags: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))

    def __post_init__(self):
        self.points = np.asarray(self.points, np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, np.float64)
        self.colors = self.colors.reshape(len(self.points), self.colors.shape[-1] if self.colors.ndim > 1 else 3)
        self.tags = np.asarray(self.tags, np.int64).reshape(-1, 2)
        if len(self.tags) != len(self.points):
            raise ValueError("one tag per point")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cloud points must be finite")

    def __len__(self):
        return len(self.points)

    def extend(self, points, colors, frame: int, iteration: int) -> "GlobalPointCloud":
        tags = np.tile([frame, iteration], (len(points), 1))
        colors = np.asarray(colors, np.float64).reshape(len(points), -1)
        if len(self) and colors.shape[1] != self.colors.shape[1]:
            colors = np.broadcast_to(colors.mean(axis=1, keepdims=True), (len(points), self.colors.shape[1]))
        return GlobalPointCloud(np.concatenate([self.points, points]),
                                np.concatenate([self.colors, colors]) if len(self) else colors,
                                np.concatenate([self.tags, tags]))


@dataclass
class SupervisionRecord:
    masks: list
    skipped: int = 0   # hole pixels without usable depth


# ------------------------------------------------------------------ scheduling


def _tie_key(d: float) -> float:
    # symmetric poses give distances that differ only by rounding; let the index decide those
    return round(float(d), 9)


def _distances(buffer: DataBuffer, t: int, scene_scale: float) -> np.ndarray:
    ref = buffer.entries[0].poses[t]
    return np.array([pose_distance(e.poses[t], ref, scene_scale) for e in buffer.entries])


def select_peripheral(buffer: DataBuffer, t: int, scene_scale: float,
                      mode: str = PERIPHERAL_EXTREMES) -> tuple[int, int]:
    """Indices of the two buffer entries bounding the explored views at ``t``.

    ``extremes``: the entry farthest from the input pose, then the entry
    farthest from that one. ``farthest``: the two entries farthest from the
    input pose. Ties go to the lower index; a one-entry buffer gives ``(0, 0)``.
    """
    if len(buffer) == 1:
        return 0, 0
    d0 = [_tie_key(d) for d in _distances(buffer, t, scene_scale)]
    idx = range(len(d0))
    a = min(idx, key=lambda i: (-d0[i], i))
    if mode == PERIPHERAL_FARTHEST:
        return a, min((i for i in idx if i != a), key=lambda i: (-d0[i], i))
    if mode != PERIPHERAL_EXTREMES:
        raise ValueError(f"unknown peripheral mode {mode!r}")
    pa = buffer.entries[a].poses[t]
    da = [_tie_key(pose_distance(e.poses[t], pa, scene_scale)) for e in buffer.entries]
    return a, min((i for i in idx if i != a), key=lambda i: (-da[i], i))


def assign_targets(buffer: DataBuffer, t: int, targets: TargetPoseSet, h: int, scene_scale: float,
                   peripherals: tuple[int, int] | None = None, mode: str = PERIPHERAL_EXTREMES) -> list:
    """Pick the ``h`` unvisited targets at ``t`` nearest to either peripheral entry.

    Returns ``(target_index, source_entry)`` pairs, nearest first (ties by target
    index), and marks them visited.
    """
    a, b = peripherals if peripherals is not None else select_peripheral(buffer, t, scene_scale, mode)
    free = np.flatnonzero(~targets.visited[t])
    if len(free) < h:
        raise PlanError(f"timestamp {t}: {len(free)} unvisited targets left, need {h}")
    pa, pb = buffer.entries[a].poses[t], buffer.entries[b].poses[t]
    rows = []
    for i in free:
        q = targets.poses[t][i]
        da, db = pose_distance(q, pa, scene_scale), pose_distance(q, pb, scene_scale)
        rows.append((_tie_key(min(da, db)), int(i), a if _tie_key(da) <= _tie_key(db) else b))
    rows.sort(key=lambda r: (r[0], r[1]))
    out = [(i, src) for _, i, src in rows[:h]]
    for i, _ in out:
        targets.visited[t, i] = True
    return out


def group_by_rank(per_timestamp: list) -> list:
    """Regroup per-timestamp warps into videos by warp-distance rank.

    ``per_timestamp[t]`` is a list of ``(distance, target_index, item)``; video
    ``l`` collects the ``l``-th smallest ``(distance, target_index)`` item of
    every timestamp, in time order.
    """
    if not per_timestamp:
        return []
    h = len(per_timestamp[0])
    if any(len(row) != h for row in per_timestamp):
        raise ValueError("every timestamp must produce the same number of warps")
    ranked = [sorted(row, key=lambda r: (_tie_key(r[0]), r[1])) for row in per_timestamp]
    return [[ranked[t][l][2] for t in range(len(ranked))] for l in range(h)]


# ------------------------------------------------------------------ supervision


def render_visibility(cloud: GlobalPointCloud, pose: Pose, k: Intrinsics, depth: np.ndarray | None = None,
                      radius: int = 1, depth_tol: float | None = DEFAULT_DEPTH_TOL) -> np.ndarray:
    """Pixels of the view at ``pose`` that already show a cloud point.

    Points are splatted to their nearest pixel and spread over a square of
    the given radius, keeping the nearest depth. With ``depth`` and
    ``depth_tol`` a pixel only counts when that depth agrees with the frame's
    own to within the relative tolerance, so points hidden behind the frame's
    surface do not count.
    """
    h, w = k.shape
    zimg = np.full(h * w, np.inf)
    if len(cloud):
        pix, z, front = project(cloud.points, pose, k)
        u = np.floor(pix[:, 0] + 0.5)
        v = np.floor(pix[:, 1] + 0.5)
        ok = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
        np.minimum.at(zimg, (v[ok] * w + u[ok]).astype(np.int64), z[ok])
    zimg = zimg.reshape(h, w)
    if radius > 0:
        zimg = minimum_filter(zimg, size=2 * radius + 1, mode="constant", cval=np.inf)
    vis = np.isfinite(zimg)
    if depth is not None and depth_tol is not None:
        d = np.asarray(depth, np.float64)
        has = valid_depth(d)
        vis &= ~has | (np.abs(zimg - np.where(has, d, 0.0)) <= depth_tol * np.where(has, d, 0.0))
    return vis


def update_supervision(inpainted, pre_masks, poses, k: Intrinsics, cloud: GlobalPointCloud, depths,
                       frame_indices=None, iteration: int = 0, radius: int = 1,
                       depth_tol: float | None = DEFAULT_DEPTH_TOL):
    """Supervision masks for freshly inpainted frames, and the grown cloud.

    Frames are handled in order; hole pixels not yet seen in the cloud get
    ``S = 1`` and are added to it, seen ones get ``S = 0``. Valid pixels always
    get ``S = 1``.
    """
    if not (len(inpainted) == len(pre_masks) == len(poses) == len(depths)):
        raise ValueError("inpainted frames, masks, poses and depths must have equal lengths")
    frame_indices = list(range(len(inpainted))) if frame_indices is None else list(frame_indices)
    masks, skipped = [], 0
    for i, (img, m, pose, d) in enumerate(zip(inpainted, pre_masks, poses, depths)):
        d = np.asarray(d, np.float64)
        hole = np.asarray(m) == 0
        seen = render_visibility(cloud, pose, k, d, radius, depth_tol)
        new = hole & ~seen
        usable = new & valid_depth(d)
        skipped += int(np.count_nonzero(new & ~usable))
        s = (~hole) | usable
        rows, cols = np.nonzero(usable)
        if len(rows):
            pix = np.stack([cols, rows], axis=-1).astype(np.float64)
            pts = backproject(pix, d[rows, cols], pose, k)
            img = np.asarray(img, np.float64)
            cols_rgb = img[rows, cols] if img.ndim == 3 else img[rows, cols][:, None]
            cloud = cloud.extend(pts, cols_rgb, frame_indices[i], iteration)
        masks.append(s.astype(np.uint8))
    return SupervisionRecord(masks, skipped), cloud


# ------------------------------------------------------------------ depth providers


class OracleDepth:
    """Ray-cast depth of a synthetic scene, optionally with multiplicative per-pixel noise.

    Fresh noise on every call stands in for re-estimating depth on each new
    video.
    """

    def __init__(self, scene, k: Intrinsics, noise: float = 0.0):
        self.scene = scene
        self.k = k
        self.noise = noise

    def __call__(self, frames, poses, frame_indices, warped, rng) -> list:
        from .synth import render
        out = []
        for pose, t in zip(poses, frame_indices):
            _, d = render(self.scene, pose, self.k, float(t))
            if self.noise:
                d = np.where(d > 0, d * (1.0 + self.noise * rng.standard_normal(d.shape)), 0.0)
                d = np.where(d > 0, d, 0.0)
            out.append(d)
        return out


class PropagatedDepth:
    """Depth carried along with the warp: the winning splat depths, holes filled by pull-push.

    With ``sparse`` points given, each filled map is re-aligned against them.
    """

    def __init__(self, k: Intrinsics, sparse=None, seed: int = 0):
        self.k = k
        self.sparse = sparse
        self.seed = seed

    def __call__(self, frames, poses, frame_indices, warped, rng) -> list:
        out = []
        for pose, wf in zip(poses, warped):
            d = pullpush_fill(wf.zbuffer, wf.mask)
            if self.sparse is not None:
                d = align_frame(d, pose, self.k, self.sparse, self.seed).depth
            out.append(d)
        return out


# ------------------------------------------------------------------ driver


def plan_iterations(H: int, N: int) -> int:
    """Videos per iteration, ``H / N``; rejects plans that do not divide evenly."""
    if N < 1:
        raise PlanError(f"need at least one iteration, got N={N}")
    if H < 1 or H % N:
        raise PlanError(f"{H} target poses cannot be split evenly over {N} iterations")
    return H // N


def run_augmentation(input_entry: BufferEntry, targets: TargetPoseSet, N: int, backend, k: Intrinsics,
                     seed: int = 0, *, depth_provider=None, scene_scale: float | None = None,
                     window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP,
                     peripheral: str = PERIPHERAL_EXTREMES, radius: int = 1,
                     depth_tol: float | None = DEFAULT_DEPTH_TOL, log=None):
    """Grow a buffer from ``input_entry`` until every target pose is visited.

    ``depth_provider(frames, poses, frame_indices, warped, rng)`` returns the
    depth maps of a completed video; the default carries the warped depth.
    Returns ``(buffer, records)`` with one supervision record per new entry.
    """
    if input_entry.iteration_born != 0:
        raise ValueError("the input entry must have iteration_born = 0")
    T = len(input_entry)
    if targets.T != T:
        raise PlanError(f"targets cover {targets.T} timestamps but the input has {T} frames")
    h = plan_iterations(targets.H, N)
    targets = targets.copy()
    if targets.visited.any():
        raise PlanError("target poses must start unvisited")
    if scene_scale is None:
        valid = np.concatenate([d[valid_depth(d)] for d in input_entry.depths])
        scene_scale = float(np.median(valid)) if len(valid) else 1.0
    provider = depth_provider or PropagatedDepth(k)
    rng = np.random.default_rng(seed)

    buffer = DataBuffer([input_entry])
    cloud = GlobalPointCloud()
    records = []
    for j in range(1, N + 1):
        per_t = []
        for t in range(T):
            row = []
            for i, src in assign_targets(buffer, t, targets, h, scene_scale, mode=peripheral):
                e = buffer.entries[src]
                q = targets.poses[t][i]
                wf = forward_warp(e.video[t], e.depths[t], e.poses[t], q, k)
                row.append((pose_distance(e.poses[t], q, scene_scale), i, (wf, q, i)))
            per_t.append(row)
        new_entries = []
        for l, video in enumerate(group_by_rank(per_t)):
            warped = [v[0] for v in video]
            vposes = [v[1] for v in video]
            req = InpaintRequest([w.image for w in warped], [w.mask for w in warped], input_entry.video,
                                 frame_indices=list(range(T)), poses=vposes)
            try:
                done = inpaint(req, backend, window, overlap).video
            except InpaintError as e:
                raise AugmentError(f"iteration {j}, video {l}: {e}") from e
            depths = provider(done, vposes, list(range(T)), warped, rng)
            rec, cloud = update_supervision(done, [w.mask for w in warped], vposes, k, cloud, depths,
                                            range(T), j, radius, depth_tol)
            records.append(rec)
            new_entries.append(BufferEntry(done, depths, vposes, j, [v[2] for v in video]))
            if log:
                log(f"iteration {j}/{N}: video {l + 1}/{h} done")
        buffer = DataBuffer(buffer.entries + new_entries)
    if not targets.visited.all():
        raise PlanError("some target poses were never visited")
    return buffer, records


# ------------------------------------------------------------------ persistence


def save_buffer(buffer: DataBuffer, root, records=None, meta: dict | None = None) -> Path:
    """Write the buffer as ``entry_%03d/`` folders of PPM frames, PFM depths and JSON poses."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"T": buffer.T, "entries": [], **(meta or {})}
    for n, e in enumerate(buffer.entries):
        d = root / f"entry_{n:03d}"
        d.mkdir(exist_ok=True)
        item = {"dir": d.name, "iteration_born": e.iteration_born,
                "target_indices": None if e.target_indices is None else [int(i) for i in e.target_indices],
                "frames": [], "supervision": None}
        for t in range(len(e)):
            (d / f"frame_{t:04d}.ppm").write_bytes(write_ppm(e.video[t]))
            (d / f"depth_{t:04d}.pfm").write_bytes(write_pfm(e.depths[t]))
            (d / f"pose_{t:04d}.json").write_text(json.dumps(e.poses[t].to_dict(), indent=2) + "\n")
            item["frames"].append({"frame": f"frame_{t:04d}.ppm", "depth": f"depth_{t:04d}.pfm",
                                   "pose": f"pose_{t:04d}.json"})
        item["poses"] = [p.to_dict() for p in e.poses]
        if records is not None and n > 0:
            rec = records[n - 1]
            names = []
            for t, m in enumerate(rec.masks):
                (d / f"supervision_{t:04d}.pgm").write_bytes(write_mask(m))
                names.append(f"supervision_{t:04d}.pgm")
            item["supervision"] = names
            item["skipped"] = rec.skipped
        manifest["entries"].append(item)
    (root / "buffer.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_buffer(root):
    """Inverse of :func:`save_buffer`; returns ``(buffer, records, manifest)``."""
    root = Path(root)
    manifest = json.loads((root / "buffer.json").read_text())
    entries, records = [], []
    for item in manifest["entries"]:
        d = root / item["dir"]
        video, depths, poses = [], [], []
        for f in item["frames"]:
            video.append(read_ppm((d / f["frame"]).read_bytes()).astype(np.float64))
            depths.append(read_pfm((d / f["depth"]).read_bytes()).astype(np.float64))
            poses.append(Pose.from_dict(json.loads((d / f["pose"]).read_text())))
        entries.append(BufferEntry(video, depths, poses, item["iteration_born"], item["target_indices"]))
        if item.get("supervision"):
            records.append(SupervisionRecord([read_mask((d / s).read_bytes()) for s in item["supervision"]],
                                             item.get("skipped", 0)))
    return DataBuffer(entries), records, manifest
