"""Analytic planes-and-spheres scene with an exact ray caster.

The scene stands in for a real capture: it renders images and exact depth,
produces a COLMAP-like sparse cloud and ground-truth 2D tracks, which makes it
the reference that the rest of the package is checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import SparsePoints, TrackSet, to_uint8
from .geom import Intrinsics, Pose, look_at, project

_EPS = 1e-9


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    color_a: tuple
    color_b: tuple
    cell: float = 0.8
    u_axis: tuple = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    color_a: tuple
    color_b: tuple
    bands: int = 4
    velocity: tuple = (0.0, 0.0, 0.0)

    def center_at(self, t: float) -> np.ndarray:
        return np.asarray(self.center, float) + t * np.asarray(self.velocity, float)


@dataclass
class SyntheticScene:
    planes: list = field(default_factory=list)
    spheres: list = field(default_factory=list)
    dynamic: Sphere | None = None
    duration: int = 16
    background: tuple = (0.0, 0.0, 0.0)

    @property
    def objects(self) -> list:
        objs = list(self.planes) + list(self.spheres)
        if self.dynamic is not None:
            objs.append(self.dynamic)
        return objs

    def is_static(self, obj_id) -> np.ndarray:
        obj_id = np.asarray(obj_id)
        dyn = len(self.planes) + len(self.spheres) if self.dynamic is not None else -2
        return (obj_id >= 0) & (obj_id != dyn)


def default_scene(duration: int = 16) -> SyntheticScene:
    """Back wall at z=4, side wall at x=-1.6 and a sphere crossing the view."""
    back = Plane((0.0, 0.0, 4.0), (0.0, 0.0, -1.0), (0.85, 0.55, 0.25), (0.25, 0.45, 0.8), cell=0.9)
    side = Plane((-1.6, 0.0, 0.0), (1.0, 0.0, 0.0), (0.3, 0.75, 0.35), (0.9, 0.9, 0.6), cell=0.9,
                 u_axis=(0.0, 0.0, 1.0))
    span = 1.2
    ball = Sphere((-span / 2, 0.15, 2.7), 0.45, (0.9, 0.2, 0.2), (0.95, 0.85, 0.3), bands=4,
                  velocity=(span / max(duration - 1, 1), 0.0, 0.0))
    return SyntheticScene([back, side], [], ball, duration)


def default_intrinsics(width: int = 128, height: int = 128) -> Intrinsics:
    f = 0.86 * width
    return Intrinsics(f, f, (width - 1) / 2, (height - 1) / 2, width, height)


def camera_arc(duration: int = 16, radius: float = 2.7, sweep: float = 0.12,
               target=(0.0, 0.0, 2.7)) -> list[Pose]:
    """Poses on a gentle horizontal arc around ``target``, looking at it."""
    target = np.asarray(target, float)
    out = []
    for a in np.linspace(-sweep / 2, sweep / 2, duration):
        eye = target + radius * np.array([np.sin(a), 0.0, -np.cos(a)])
        out.append(look_at(eye, target))
    return out


# ------------------------------------------------------------------ ray casting


def pixel_rays(pose: Pose, k: Intrinsics):
    """World ray origins/directions through every pixel centre.

    Directions are scaled so the ray parameter equals camera-frame depth.
    """
    v, u = np.mgrid[0:k.height, 0:k.width].astype(np.float64)
    cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dirs = cam @ pose.rotation
    origin = np.broadcast_to(pose.center, dirs.shape)
    return origin, dirs


def _hit_plane(pl: Plane, o, d):
    n = np.asarray(pl.normal, float)
    p0 = np.asarray(pl.point, float)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((p0 - o) @ n) / denom
    return np.where((np.abs(denom) > 1e-12) & (s > _EPS), s, np.inf)


def _hit_sphere(c, r, o, d):
    oc = o - c
    a = np.einsum("...i,...i", d, d)
    b = 2.0 * np.einsum("...i,...i", d, oc)
    cc = np.einsum("...i,...i", oc, oc) - r * r
    disc = b * b - 4 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    s1 = (-b - sq) / (2 * a)
    s2 = (-b + sq) / (2 * a)
    s = np.where(s1 > _EPS, s1, np.where(s2 > _EPS, s2, np.inf))
    return np.where(ok, s, np.inf)


def cast(scene: SyntheticScene, origins, dirs, t: float = 0.0):
    """Nearest hit along each ray: ``(s, obj_id)`` with ``obj_id = -1`` on a miss."""
    origins = np.asarray(origins, float)
    dirs = np.asarray(dirs, float)
    best = np.full(dirs.shape[:-1], np.inf)
    obj = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    for i, ob in enumerate(scene.objects):
        if isinstance(ob, Plane):
            s = _hit_plane(ob, origins, dirs)
        else:
            s = _hit_sphere(ob.center_at(t), ob.radius, origins, dirs)
        closer = s < best
        best = np.where(closer, s, best)
        obj = np.where(closer, i, obj)
    return best, obj


def _checker(a, b, cell):
    return (np.floor(a / cell) + np.floor(b / cell)).astype(np.int64) % 2 == 0


def shade(scene: SyntheticScene, points, obj_id, t: float = 0.0) -> np.ndarray:
    """Procedural texture colour of surface points (object-space checker)."""
    points = np.asarray(points, float)
    obj_id = np.asarray(obj_id)
    out = np.empty(points.shape[:-1] + (3,))
    out[...] = scene.background
    for i, ob in enumerate(scene.objects):
        sel = obj_id == i
        if not np.any(sel):
            continue
        p = points[sel]
        if isinstance(ob, Plane):
            n = np.asarray(ob.normal, float)
            ua = np.asarray(ob.u_axis, float)
            va = np.cross(n, ua)
            rel = p - np.asarray(ob.point, float)
            even = _checker(rel @ ua, rel @ va, ob.cell)
        else:
            q = (p - ob.center_at(t)) / ob.radius
            lon = np.arctan2(q[:, 0], q[:, 2])
            lat = np.arcsin(np.clip(q[:, 1], -1, 1))
            even = _checker(lon, lat + np.pi / 2, 2 * np.pi / ob.bands)
        out[sel] = np.where(even[:, None], ob.color_a, ob.color_b)
    return out


def render(scene: SyntheticScene, pose: Pose, k: Intrinsics, t: float = 0.0):
    """Ray-cast ``(image, depth)``; misses get the background colour and depth 0."""
    o, d = pixel_rays(pose, k)
    s, obj = cast(scene, o, d, t)
    hit = np.isfinite(s)
    pts = o + np.where(hit, s, 0.0)[..., None] * d
    image = shade(scene, pts, np.where(hit, obj, -1), t)
    depth = np.where(hit, s, 0.0)
    return image, depth


def render_video(scene: SyntheticScene, poses, k: Intrinsics):
    frames = [render(scene, p, k, t) for t, p in enumerate(poses)]
    return [f[0] for f in frames], [f[1] for f in frames]


# ------------------------------------------------------------------ sparse cloud and tracks


def sample_sparse(scene: SyntheticScene, poses, k: Intrinsics, count: int, seed: int = 0) -> SparsePoints:
    """Surface points on static geometry seen through random pixels of random frames."""
    rng = np.random.default_rng(seed)
    pts, cols = [], []
    have = 0
    for _ in range(1000):
        if have >= count:
            break
        n = 2 * (count - have) + 16
        fi = rng.integers(0, len(poses), n)
        px = rng.integers(0, [k.width, k.height], size=(n, 2)).astype(float)
        for f in np.unique(fi):
            sel = fi == f
            pose = poses[f]
            cam = np.stack([(px[sel, 0] - k.cx) / k.fx, (px[sel, 1] - k.cy) / k.fy,
                            np.ones(sel.sum())], axis=-1)
            d = cam @ pose.rotation
            o = np.broadcast_to(pose.center, d.shape)
            s, obj = cast(scene, o, d, float(f))
            keep = np.isfinite(s) & scene.is_static(obj)
            p = o[keep] + s[keep, None] * d[keep]
            pts.append(p)
            cols.append(shade(scene, p, obj[keep], float(f)))
            have += len(p)
    if have < count:
        raise RuntimeError("scene has too little static geometry in view")
    xyz = np.concatenate(pts)[:count]
    rgb = to_uint8(np.concatenate(cols)[:count])
    return SparsePoints(xyz, rgb, np.full(count, 2), np.arange(1, count + 1))


def sample_frame_points(scene: SyntheticScene, pose: Pose, k: Intrinsics, count: int,
                        t: float = 0.0, seed: int = 0) -> np.ndarray:
    """Surface points hit through ``count`` distinct random pixel centres of one view.

    Every point projects back exactly onto a pixel centre, so a depth lookup
    at its nearest pixel carries no sub-pixel error.
    """
    o, d = pixel_rays(pose, k)
    s, _ = cast(scene, o, d, t)
    hit = np.flatnonzero(np.isfinite(s).ravel())
    if len(hit) < count:
        raise ValueError(f"only {len(hit)} pixels hit geometry, asked for {count}")
    sel = np.sort(np.random.default_rng(seed).choice(hit, count, replace=False))
    return o.reshape(-1, 3)[sel] + s.ravel()[sel, None] * d.reshape(-1, 3)[sel]


def visible_points(scene: SyntheticScene, points, pose: Pose, k: Intrinsics, t: float = 0.0,
                   rtol: float = 1e-6) -> np.ndarray:
    """Whether each world point is the first surface hit from ``pose`` and lands in the image."""
    points = np.asarray(points, float).reshape(-1, 3)
    pix, z, front = project(points, pose, k)
    inb = front & (pix[:, 0] >= -0.5) & (pix[:, 0] < k.width - 0.5) \
        & (pix[:, 1] >= -0.5) & (pix[:, 1] < k.height - 0.5)
    d = points - pose.center
    # scale rays so parameter 1 reaches the point
    s, _ = cast(scene, np.broadcast_to(pose.center, d.shape), d, t)
    return inb & (s >= 1.0 - rtol)


def sample_tracks(scene: SyntheticScene, poses, k: Intrinsics, grid_stride: int = 4,
                  n_frames: int | None = None) -> TrackSet:
    """Ground-truth tracks seeded on a grid in the first frame.

    Points on the moving sphere follow its translation; visibility is an
    exact occlusion plus in-image test per frame.
    """
    T = len(poses) if n_frames is None else n_frames
    rows, cols = np.mgrid[grid_stride // 2:k.height:grid_stride, grid_stride // 2:k.width:grid_stride]
    px = np.stack([cols.ravel(), rows.ravel()], axis=-1).astype(float)
    pose0 = poses[0]
    cam = np.stack([(px[:, 0] - k.cx) / k.fx, (px[:, 1] - k.cy) / k.fy, np.ones(len(px))], axis=-1)
    d = cam @ pose0.rotation
    o = np.broadcast_to(pose0.center, d.shape)
    s, obj = cast(scene, o, d, 0.0)
    hit = np.isfinite(s)
    P0, obj, px = o[hit] + s[hit, None] * d[hit], obj[hit], px[hit]
    moving = ~scene.is_static(obj)
    positions = np.full((len(P0), T, 2), np.nan)
    vis = np.zeros((len(P0), T), bool)
    positions[:, 0] = px
    vis[:, 0] = True
    for t in range(1, T):
        Pt = P0.copy()
        if scene.dynamic is not None:
            Pt[moving] += scene.dynamic.center_at(t) - scene.dynamic.center_at(0)
        pix, _, front = project(Pt, poses[t], k)
        positions[:, t] = pix
        vis[:, t] = visible_points(scene, Pt, poses[t], k, float(t))
    return TrackSet(positions, vis)
