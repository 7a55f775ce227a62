"""Pinhole cameras, rigid poses and the projection primitives everything else uses.

Conventions
-----------
* Poses are world-to-camera: ``x_cam = R @ x_world + t``.
* Pixel ``(u, v)`` is a continuous coordinate; integer values sit on pixel
  centres, ``u`` indexes columns and ``v`` rows.
* Depth is camera-frame ``z``, not distance along the ray.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BEHIND_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not orthonormal with det 1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_center(cls, rotation: np.ndarray, center: np.ndarray) -> "Pose":
        R = np.asarray(rotation, dtype=np.float64)
        return cls(R, -R @ np.asarray(center, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Viewing direction (camera +z) expressed in world coordinates."""
        return self.rotation[2].copy()

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["rotation"], dtype=np.float64),
                   np.array(d["translation"], dtype=np.float64))


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix for a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = (float(c) for c in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quaternion_to_rotation`, returned with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """World-to-camera pose at ``eye`` looking at ``target``.

    ``down`` is the world direction that should point down the image rows, so
    an eye at the origin looking along +z gets the identity rotation.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_center(np.stack([x, y, z]), eye)


def project(points, pose: Pose, k: Intrinsics):
    """Project world points into the image.

    Returns ``(pixels, depth, in_front)``. ``pixels`` has shape ``(..., 2)``;
    entries for points with ``depth <= 1e-9`` are NaN and flagged ``False`` in
    ``in_front`` rather than raising.
    """
    X = pose.transform(points)
    z = X[..., 2]
    in_front = z > BEHIND_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * X[..., 0] / z + k.cx
        v = k.fy * X[..., 1] / z + k.cy
    pix = np.stack([u, v], axis=-1)
    pix[~in_front] = np.nan
    return pix, z, in_front


def backproject(pixels, depth, pose: Pose, k: Intrinsics) -> np.ndarray:
    """Lift pixels with positive camera depth to world points."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise ValueError("backproject needs finite, positive depth")
    x = (pixels[..., 0] - k.cx) / k.fx * depth
    y = (pixels[..., 1] - k.cy) / k.fy * depth
    cam = np.stack([x, y, depth], axis=-1)
    return (cam - pose.translation) @ pose.rotation


def valid_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth)
    return np.isfinite(depth) & (depth > 0)


def backproject_depth_map(depth: np.ndarray, pose: Pose, k: Intrinsics, stride: int = 1):
    """Back-project every valid pixel of a depth map on a ``stride`` grid.

    Returns ``(points, rows, cols)`` with points in world coordinates.
    """
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.mgrid[0:depth.shape[0]:stride, 0:depth.shape[1]:stride]
    d = depth[rows, cols]
    ok = valid_depth(d)
    rows, cols, d = rows[ok], cols[ok], d[ok]
    pix = np.stack([cols, rows], axis=-1).astype(np.float64)
    return backproject(pix, d, pose, k), rows, cols


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in ``[0, pi]``."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def pose_distance(a: Pose, b: Pose, scene_scale: float) -> float:
    """Rotation geodesic angle plus centre offset measured in scene-scale units."""
    if not scene_scale > 0:
        raise ValueError("scene_scale must be positive")
    ang = rotation_angle(a.rotation @ b.rotation.T)
    return ang + float(np.linalg.norm(a.center - b.center)) / scene_scale


def orbit_offsets(count: int, max_angle: float) -> np.ndarray:
    """Azimuth offsets spread evenly over ``[-max_angle, max_angle]`` without 0.

    Even counts are symmetric. For odd counts an ``count + 1`` point grid is
    used and its most negative entry dropped, so no offset is ever zero.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 < max_angle < np.pi:
        raise ValueError("max_angle must lie in (0, pi)")
    if count % 2 == 0:
        return np.linspace(-max_angle, max_angle, count)
    return np.linspace(-max_angle, max_angle, count + 1)[1:]


def orbit_targets(base: Pose, k: Intrinsics, center_depth: float, count: int,
                  max_angle: float = 0.35) -> list[Pose]:
    """Poses on a horizontal arc around the point ``center_depth`` ahead of ``base``.

    Each pose is ``base`` rigidly rotated about the look-at point, around the
    camera's vertical axis, so every optical axis still passes through it.
    """
    if not center_depth > 0:
        raise ValueError("center_depth must be positive")
    target = base.center + center_depth * base.optical_axis
    up = base.rotation[1]
    out = []
    for a in orbit_offsets(count, max_angle):
        Q = axis_angle_rotation(up, a)
        c = target + Q @ (base.center - target)
        out.append(Pose.from_center(base.rotation @ Q.T, c))
    return out
