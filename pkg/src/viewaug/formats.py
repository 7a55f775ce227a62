"""Readers and writers for COLMAP text models, PFM depth, binary PPM/PGM and track files.

All functions work on in-memory ``str``/``bytes``; callers own file I/O.
Images are ``(H, W, C)`` float arrays in ``[0, 1]``, depth maps ``(H, W)``
float arrays with non-positive entries meaning "invalid", masks ``(H, W)``
``uint8`` arrays with 1 = valid and 0 = hole.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .geom import Intrinsics, Pose, quaternion_to_rotation, rotation_to_quaternion

logger = logging.getLogger(__name__)

MAX_PIXELS = 1 << 28


class FormatError(ValueError):
    """Malformed or truncated input."""


class UnsupportedFormatError(FormatError):
    """Well-formed input using a variant this module does not handle."""


# --------------------------------------------------------------------------- COLMAP


@dataclass
class SparsePoints:
    xyz: np.ndarray
    rgb: np.ndarray
    track_length: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(n, 3)
        self.track_length = np.asarray(self.track_length, dtype=np.int64).reshape(n)
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(n)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("sparse point coordinates must be finite")

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def from_xyz(cls, xyz, rgb=None) -> "SparsePoints":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        n = len(xyz)
        if rgb is None:
            rgb = np.zeros((n, 3), np.uint8)
        return cls(xyz, rgb, np.zeros(n, np.int64), np.arange(1, n + 1))


@dataclass
class ColmapImage:
    pose: Pose
    camera_id: int
    name: str


@dataclass
class ColmapModel:
    cameras: dict[int, Intrinsics] = field(default_factory=dict)
    images: dict[int, ColmapImage] = field(default_factory=dict)
    points: SparsePoints = field(default_factory=lambda: SparsePoints.from_xyz(np.zeros((0, 3))))

    def __post_init__(self):
        for iid, im in self.images.items():
            if im.camera_id not in self.cameras:
                raise FormatError(f"image {iid} references unknown camera {im.camera_id}")


# model name -> number of params; only the first four (or three) matter here
_CAMERA_MODELS = {
    "SIMPLE_PINHOLE": 3,
    "PINHOLE": 4,
    "SIMPLE_RADIAL": 4,
    "RADIAL": 5,
    "OPENCV": 8,
}


def _data_lines(text: str):
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("#"):
            continue
        yield n, s


def _parse_cameras(text: str) -> dict[int, Intrinsics]:
    cams = {}
    for n, line in _data_lines(text):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 4:
            raise FormatError(f"cameras.txt line {n}: expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS")
        model = tok[1]
        if model not in _CAMERA_MODELS:
            raise UnsupportedFormatError(f"cameras.txt line {n}: unsupported camera model {model}")
        try:
            cid, w, h = int(tok[0]), int(tok[2]), int(tok[3])
            params = [float(x) for x in tok[4:]]
        except ValueError as e:
            raise FormatError(f"cameras.txt line {n}: {e}") from None
        if len(params) != _CAMERA_MODELS[model]:
            raise FormatError(
                f"cameras.txt line {n}: {model} takes {_CAMERA_MODELS[model]} params, got {len(params)}")
        if model in ("SIMPLE_PINHOLE", "SIMPLE_RADIAL", "RADIAL"):
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            fx, fy, cx, cy = params[:4]
        if model not in ("SIMPLE_PINHOLE", "PINHOLE"):
            logger.warning("camera %d: %s distortion parameters ignored", cid, model)
        try:
            cams[cid] = Intrinsics(fx, fy, cx, cy, w, h)
        except ValueError as e:
            raise FormatError(f"cameras.txt line {n}: {e}") from None
    return cams


def _normalize_quaternion(q: np.ndarray, where: str) -> np.ndarray:
    norm = float(np.linalg.norm(q))
    dev = abs(norm - 1.0)
    if not np.isfinite(norm) or dev > 1e-1:
        raise FormatError(f"{where}: quaternion norm {norm:.6g} is not close to 1")
    if dev > 1e-3:
        logger.warning("%s: renormalizing quaternion with norm %.6g", where, norm)
    return q / norm


def _parse_images(text: str) -> dict[int, ColmapImage]:
    images = {}
    lines = list(_data_lines(text))
    i = 0
    while i < len(lines):
        n, line = lines[i]
        if not line:
            # only blank POINTS2D lines are legal here; tolerate trailing blanks
            i += 1
            continue
        tok = line.split(maxsplit=9)
        if len(tok) < 10:
            raise FormatError(f"images.txt line {n}: expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        try:
            iid = int(tok[0])
            q = np.array([float(x) for x in tok[1:5]])
            t = np.array([float(x) for x in tok[5:8]])
            cid = int(tok[8])
        except ValueError as e:
            raise FormatError(f"images.txt line {n}: {e}") from None
        if not np.all(np.isfinite(t)):
            raise FormatError(f"images.txt line {n}: non-finite translation")
        q = _normalize_quaternion(q, f"images.txt line {n}")
        images[iid] = ColmapImage(Pose(quaternion_to_rotation(q), t), cid, tok[9])
        # the POINTS2D line that follows belongs to this image
        i += 2
    return images


def _parse_points(text: str) -> SparsePoints:
    xyz, rgb, tl, ids = [], [], [], []
    for n, line in _data_lines(text):
        if not line:
            continue
        tok = line.split()
        if len(tok) < 8 or (len(tok) - 8) % 2:
            raise FormatError(f"points3D.txt line {n}: expected POINT3D_ID X Y Z R G B ERROR TRACK[]")
        try:
            ids.append(int(tok[0]))
            p = [float(x) for x in tok[1:4]]
            c = [int(x) for x in tok[4:7]]
            float(tok[7])
        except ValueError as e:
            raise FormatError(f"points3D.txt line {n}: {e}") from None
        if not all(np.isfinite(p)):
            raise FormatError(f"points3D.txt line {n}: non-finite coordinate")
        if not all(0 <= v <= 255 for v in c):
            raise FormatError(f"points3D.txt line {n}: color out of range")
        xyz.append(p)
        rgb.append(c)
        tl.append((len(tok) - 8) // 2)
    return SparsePoints(np.array(xyz).reshape(-1, 3), np.array(rgb).reshape(-1, 3), tl, ids)


def parse_colmap_text(cameras_text: str, images_text: str, points_text: str) -> ColmapModel:
    """Parse the three files of a COLMAP text export."""
    return ColmapModel(_parse_cameras(cameras_text), _parse_images(images_text),
                       _parse_points(points_text))


def write_colmap_text(model: ColmapModel) -> tuple[str, str, str]:
    """Serialize to ``(cameras.txt, images.txt, points3D.txt)`` contents.

    Cameras are written as PINHOLE and images without 2D observations.
    """
    cams = ["# Camera list with one line of data per camera:",
            "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for cid, k in sorted(model.cameras.items()):
        f = (repr(float(v)) for v in (k.fx, k.fy, k.cx, k.cy))
        cams.append(f"{cid} PINHOLE {k.width} {k.height} " + " ".join(f))
    ims = ["# Image list with two lines of data per image:",
           "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
           "#   POINTS2D[] as (X, Y, POINT3D_ID)"]
    for iid, im in sorted(model.images.items()):
        q = rotation_to_quaternion(im.pose.rotation)
        t = im.pose.translation
        vals = " ".join(repr(float(x)) for x in (*q, *t))
        ims.append(f"{iid} {vals} {im.camera_id} {im.name}")
        ims.append("")
    pts = ["# 3D point list with one line of data per point:",
           "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"]
    P = model.points
    for i in range(len(P)):
        x, y, z = (repr(float(v)) for v in P.xyz[i])
        r, g, b = (int(v) for v in P.rgb[i])
        track = " ".join("0 0" for _ in range(int(P.track_length[i])))
        pts.append(f"{int(P.ids[i])} {x} {y} {z} {r} {g} {b} 0 {track}".rstrip())
    return ("\n".join(cams) + "\n", "\n".join(ims) + "\n", "\n".join(pts) + "\n")


# --------------------------------------------------------------------------- netpbm headers


_WS = b" \t\n\r\v\f"


def _read_header_tokens(data: bytes, count: int, what: str) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens (``#`` comments allowed).

    Returns the tokens and the offset just past the single whitespace byte that
    terminates the last token.
    """
    toks = []
    pos = 0
    n = len(data)
    while len(toks) < count:
        while pos < n and data[pos] in _WS:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and data[pos] not in _WS:
            pos += 1
        if pos == start or pos >= n:
            raise FormatError(f"{what}: truncated header at byte {pos}")
        toks.append(data[start:pos])
        if len(toks) == count:
            pos += 1
    return toks, pos


def _dims(w_tok: bytes, h_tok: bytes, what: str) -> tuple[int, int]:
    if not (re.fullmatch(rb"[0-9]{1,9}", w_tok) and re.fullmatch(rb"[0-9]{1,9}", h_tok)):
        raise FormatError(f"{what}: bad dimensions {w_tok!r} x {h_tok!r}")
    w, h = int(w_tok), int(h_tok)
    if w <= 0 or h <= 0:
        raise FormatError(f"{what}: dimensions must be positive")
    if w * h > MAX_PIXELS:
        raise FormatError(f"{what}: dimensions {w}x{h} overflow the {MAX_PIXELS}-pixel limit")
    return w, h


# --------------------------------------------------------------------------- PFM


def read_pfm(data: bytes) -> np.ndarray:
    """Decode a grayscale ``Pf`` file into an ``(H, W)`` float32 array, top row first."""
    toks, pos = _read_header_tokens(data, 4, "PFM")
    if toks[0] == b"PF":
        raise UnsupportedFormatError("PFM: color (PF) files are not supported")
    if toks[0] != b"Pf":
        raise FormatError(f"PFM: bad magic {toks[0]!r}")
    w, h = _dims(toks[1], toks[2], "PFM")
    try:
        scale = float(toks[3])
    except ValueError:
        raise FormatError(f"PFM: bad scale {toks[3]!r}") from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM: scale must be finite and non-zero")
    need = w * h * 4
    have = len(data) - pos
    if have < need:
        raise FormatError(f"PFM: payload truncated at byte {len(data)}, expected {pos + need} bytes")
    if have > need:
        raise FormatError(f"PFM: {have - need} unexpected bytes after payload at byte {pos + need}")
    dt = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    arr = np.frombuffer(data, dtype=dt, count=w * h, offset=pos).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pfm(depth: np.ndarray) -> bytes:
    """Encode an ``(H, W)`` depth map as little-endian ``Pf`` (scale -1.0)."""
    d = np.asarray(depth)
    if d.ndim != 2:
        raise ValueError("write_pfm expects a 2-D array")
    if not np.all(np.isfinite(d)):
        raise ValueError("write_pfm: depth contains non-finite values; mark invalid pixels with 0")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.flipud(d).astype("<f4").tobytes()


# --------------------------------------------------------------------------- PPM / PGM


def read_ppm(data: bytes) -> np.ndarray:
    """Decode binary P6/P5 (maxval 255) into an ``(H, W, C)`` float array in ``[0, 1]``."""
    if len(data) < 2:
        raise FormatError("PPM: truncated header at byte 0")
    magic = data[:2]
    if magic in (b"P2", b"P3", b"P1", b"P4"):
        raise UnsupportedFormatError(f"PPM: {magic.decode()} netpbm variant is not supported")
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"PPM: bad magic {magic!r}")
    toks, pos = _read_header_tokens(data, 4, "PPM")
    if toks[0] != magic:
        raise FormatError(f"PPM: bad magic {toks[0]!r}")
    w, h = _dims(toks[1], toks[2], "PPM")
    if toks[3] != b"255":
        raise UnsupportedFormatError(f"PPM: maxval {toks[3].decode(errors='replace')} is not supported")
    c = 3 if magic == b"P6" else 1
    need = w * h * c
    have = len(data) - pos
    if have < need:
        raise FormatError(f"PPM: payload truncated at byte {len(data)}, expected {pos + need} bytes")
    if have > need:
        raise FormatError(f"PPM: {have - need} unexpected bytes after payload at byte {pos + need}")
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w, c)
    return arr.astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(image: np.ndarray) -> bytes:
    """Encode ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` data as P5/P6, rounding to 8 bits."""
    im = np.asarray(image)
    if im.ndim == 2:
        im = im[..., None]
    if im.ndim != 3 or im.shape[2] not in (1, 3):
        raise ValueError(f"write_ppm: unsupported shape {im.shape}")
    if np.issubdtype(im.dtype, np.floating):
        if not np.all(np.isfinite(im)) or im.min(initial=0) < 0 or im.max(initial=0) > 1:
            raise ValueError("write_ppm: samples must lie in [0, 1]")
        im = to_uint8(im)
    else:
        im = im.astype(np.uint8)
    h, w, c = im.shape
    magic = "P6" if c == 3 else "P5"
    return f"{magic}\n{w} {h}\n255\n".encode("ascii") + im.tobytes()


def read_mask(data: bytes) -> np.ndarray:
    """PGM mask with 0 = hole and any non-zero sample = valid."""
    im = read_ppm(data)
    if im.shape[2] != 1:
        raise FormatError("mask must be a single-channel PGM")
    return (im[..., 0] > 0).astype(np.uint8)


def write_mask(mask: np.ndarray) -> bytes:
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    return write_ppm((m.astype(np.uint8) * 255)[..., None])


# --------------------------------------------------------------------------- tracks


@dataclass
class TrackSet:
    """``positions`` is ``(N, T, 2)`` continuous pixels, ``visibility`` ``(N, T)`` bool."""

    positions: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("positions must have shape (N, T, 2)")
        if self.visibility.shape != self.positions.shape[:2]:
            raise ValueError("visibility must have shape (N, T)")
        if self.n_tracks and self.n_frames and not self.visibility[:, 0].all():
            raise ValueError("every track must be visible in the first frame")
        if not np.all(np.isfinite(self.positions[self.visibility])):
            raise ValueError("visible track positions must be finite")

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[0]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def empty(cls, n_frames: int) -> "TrackSet":
        return cls(np.zeros((0, n_frames, 2)), np.zeros((0, n_frames), bool))


def read_tracks(text: str) -> TrackSet:
    lines = [(n, l.strip()) for n, l in enumerate(text.splitlines(), start=1) if l.strip()]
    if not lines:
        raise FormatError("tracks: missing 'T N' header")
    n0, head = lines[0]
    try:
        T, N = (int(x) for x in head.split())
    except ValueError:
        raise FormatError(f"tracks line {n0}: header must be 'T N'") from None
    if T < 1 or N < 0:
        raise FormatError(f"tracks line {n0}: need T >= 1 and N >= 0")
    body = lines[1:]
    if len(body) != N:
        raise FormatError(f"tracks: header declares {N} tracks, found {len(body)} (track index {min(N, len(body))})")
    pos = np.zeros((N, T, 2))
    vis = np.zeros((N, T), bool)
    for i, (n, line) in enumerate(body):
        tok = line.split()
        if len(tok) != 3 * T:
            raise FormatError(f"tracks line {n}: track {i} has {len(tok)} values, expected {3 * T}")
        for t in range(T):
            u, v, s = tok[3 * t: 3 * t + 3]
            if s not in ("0", "1"):
                raise FormatError(f"tracks line {n}: track {i} frame {t} visibility {s!r} not in {{0,1}}")
            try:
                pos[i, t] = float(u), float(v)
            except ValueError:
                raise FormatError(f"tracks line {n}: track {i} frame {t} bad position") from None
            vis[i, t] = s == "1"
    try:
        return TrackSet(pos, vis)
    except ValueError as e:
        raise FormatError(f"tracks: {e}") from None


def write_tracks(tracks: TrackSet) -> str:
    out = [f"{tracks.n_frames} {tracks.n_tracks}"]
    for i in range(tracks.n_tracks):
        out.append(" ".join(
            f"{float(tracks.positions[i, t, 0])!r} {float(tracks.positions[i, t, 1])!r} {int(tracks.visibility[i, t])}"
            for t in range(tracks.n_frames)))
    return "\n".join(out) + "\n"
