"""Command-line front end: one subcommand per pipeline stage, all driven by one JSON config.

Every command writes ``report.json`` into its output directory. Exit codes:
0 ok, 1 usage or config error, 2 unreadable data, 3 numeric failure,
4 inpainting backend failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import augment as aug
from .depth_align import (AlignmentFailedError, AffineDepthParams, InsufficientObservationsError,
                          SingularFitError, align_frame)
from .formats import (ColmapImage, ColmapModel, FormatError, parse_colmap_text, read_mask, read_pfm,
                      read_ppm, read_tracks, write_colmap_text, write_mask, write_pfm, write_ppm,
                      write_tracks)
from .geom import Intrinsics, Pose, orbit_targets, valid_depth
from .inpaint import InpaintError, InpaintRequest, inpaint, resolve_backend
from .losses import LossWeights, augmented_objective, iv_loss, masked_psnr, masked_ssim
from .trackmask import MODES, apply_mask, curate, default_footprint, masks_from_tracks
from .warp import forward_warp

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_BACKEND = 0, 1, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "paths": {"input": None, "frames": None, "depths": None, "colmap": None, "tracks": None,
              "masks": None, "anchors": None, "scene": None, "reference": None, "output": "out"},
    "synth": {"width": 128, "height": 128, "frames": 16, "static": False, "sparse_points": 2000,
              "track_stride": 8, "rel_alpha": 3.2, "rel_beta": 0.4},
    "align": {"iterations": 100, "sample_size": 10, "stride": 8},
    "curate": {"tau": 0.98, "mode": "keep_if_geq", "footprint": None},
    "warp": {"angle": 0.1745329252, "center_depth": None},
    "augment": {"H": 6, "N": 6, "max_angle": 0.35, "center_depth": None, "peripheral": "extremes",
                "radius": 1, "depth_tol": 0.1, "depth": "propagated", "depth_noise": 0.0},
    "inpaint": {"backend": "pullpush", "window": 16, "overlap": 4},
    "losses": {"lambda_r": 1.0, "lambda_s": 0.2, "lambda_l": 0.0, "radius": 1},
}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ config


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}: expected an object")
            out[key] = _merge(base[key], val, path + ".")
        else:
            out[key] = val
    return out


def _set(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for i, key in enumerate(keys):
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"{'.'.join(keys[:i + 1])}: unknown field")
        if i == len(keys) - 1:
            node[key] = value
        else:
            node = node[key]


def _num(cfg, path, lo=None, hi=None, integer=False, optional=False, errors=None):
    node = cfg
    for key in path.split("."):
        node = node[key]
    if node is None and optional:
        return
    ok = isinstance(node, (int, float)) and not isinstance(node, bool) and math.isfinite(node)
    if ok and integer:
        ok = isinstance(node, int)
    if ok and lo is not None:
        ok = node >= lo
    if ok and hi is not None:
        ok = node <= hi
    if not ok:
        rng = f" in [{lo}, {hi}]" if hi is not None else (f" >= {lo}" if lo is not None else "")
        errors.append(f"{path}: expected {'an integer' if integer else 'a number'}{rng}, got {node!r}")


def _ints(*xs) -> bool:
    return all(isinstance(x, int) and not isinstance(x, bool) for x in xs)


def validate(cfg: dict) -> list:
    """Every violation as ``field.path: message``; empty when the config is usable."""
    e = []
    _num(cfg, "seed", 0, integer=True, errors=e)
    for f in ("width", "height", "frames", "track_stride"):
        _num(cfg, f"synth.{f}", 1, integer=True, errors=e)
    _num(cfg, "synth.sparse_points", 10, integer=True, errors=e)
    _num(cfg, "synth.rel_alpha", errors=e)
    _num(cfg, "synth.rel_beta", errors=e)
    if isinstance(cfg["synth"]["rel_alpha"], (int, float)) and cfg["synth"]["rel_alpha"] <= 0:
        e.append("synth.rel_alpha: must be positive")
    _num(cfg, "align.iterations", 1, integer=True, errors=e)
    _num(cfg, "align.sample_size", 2, integer=True, errors=e)
    _num(cfg, "align.stride", 1, integer=True, errors=e)
    _num(cfg, "curate.tau", 0.0, 1.0, errors=e)
    if cfg["curate"]["mode"] not in MODES:
        e.append(f"curate.mode: expected one of {list(MODES)}, got {cfg['curate']['mode']!r}")
    _num(cfg, "curate.footprint", 0, integer=True, optional=True, errors=e)
    _num(cfg, "warp.angle", -3.1, 3.1, errors=e)
    _num(cfg, "warp.center_depth", 1e-9, optional=True, errors=e)
    _num(cfg, "augment.H", 1, integer=True, errors=e)
    _num(cfg, "augment.N", 1, integer=True, errors=e)
    a = cfg["augment"]
    if _ints(a["H"], a["N"]) and a["H"] >= 1 and a["N"] >= 1 and a["H"] % a["N"]:
        e.append(f"augment.N: {a['H']} target poses cannot be split evenly over {a['N']} iterations")
    _num(cfg, "augment.max_angle", 1e-9, 3.1, errors=e)
    _num(cfg, "augment.center_depth", 1e-9, optional=True, errors=e)
    _num(cfg, "augment.radius", 0, integer=True, errors=e)
    _num(cfg, "augment.depth_tol", 0.0, optional=True, errors=e)
    _num(cfg, "augment.depth_noise", 0.0, errors=e)
    if a["peripheral"] not in (aug.PERIPHERAL_EXTREMES, aug.PERIPHERAL_FARTHEST):
        e.append(f"augment.peripheral: expected 'extremes' or 'farthest', got {a['peripheral']!r}")
    if a["depth"] not in ("propagated", "oracle"):
        e.append(f"augment.depth: expected 'propagated' or 'oracle', got {a['depth']!r}")
    b = cfg["inpaint"]["backend"]
    if not (isinstance(b, str) and (b in ("pullpush", "oracle") or b.startswith("extern:"))):
        e.append(f"inpaint.backend: expected pullpush, oracle or extern:<cmd>, got {b!r}")
    _num(cfg, "inpaint.window", 1, integer=True, errors=e)
    _num(cfg, "inpaint.overlap", 0, integer=True, errors=e)
    i = cfg["inpaint"]
    if _ints(i["window"], i["overlap"]) and i["overlap"] >= i["window"]:
        e.append("inpaint.overlap: must be smaller than inpaint.window")
    for f in ("lambda_r", "lambda_s", "lambda_l"):
        _num(cfg, f"losses.{f}", 0.0, errors=e)
    _num(cfg, "losses.radius", 0, integer=True, errors=e)
    for key, val in cfg["paths"].items():
        if val is not None and not isinstance(val, str):
            e.append(f"paths.{key}: expected a path string")
    return e


def build_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config: top level must be an object")
        cfg = _merge(cfg, user)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected key.path=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set(cfg, key, value)
    flags = {"seed": "seed", "input": "paths.input", "output": "paths.output", "backend": "inpaint.backend"}
    for attr, dotted in flags.items():
        val = getattr(args, attr, None)
        if val is not None:
            _set(cfg, dotted, val)
    for name in ("frames", "depths", "colmap", "tracks", "masks", "anchors", "scene", "reference"):
        val = getattr(args, name, None)
        if val is not None:
            _set(cfg, f"paths.{name}", val)
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


# ------------------------------------------------------------------ disk helpers


def _dir(cfg, key: str, fallback: str | None = None) -> Path:
    p = cfg["paths"][key] or fallback or cfg["paths"]["input"]
    if p is None:
        raise ConfigError(f"paths.{key}: no directory given (set it or paths.input)")
    return Path(p)


def _numbered(folder: Path, prefix: str, ext: str) -> list:
    files = sorted(folder.glob(f"{prefix}_[0-9][0-9][0-9][0-9].{ext}"))
    if not files:
        raise DataError(f"no {prefix}_%04d.{ext} files in {folder}")
    return files


def _read_all(files, reader) -> list:
    return [reader(f.read_bytes()).astype(np.float64) for f in files]


def load_camera(frames_dir: Path, colmap_dir: Path | None = None):
    """Intrinsics and per-frame poses, from JSON files or else a COLMAP text model."""
    kfile = frames_dir / "intrinsics.json"
    pose_files = sorted(frames_dir.glob("pose_[0-9][0-9][0-9][0-9].json"))
    if kfile.exists() and pose_files:
        k = Intrinsics.from_dict(json.loads(kfile.read_text()))
        return k, [Pose.from_dict(json.loads(p.read_text())) for p in pose_files]
    model = load_colmap(colmap_dir or frames_dir)
    if not model.cameras or not model.images:
        raise DataError("COLMAP model has no cameras or images")
    ims = sorted(model.images.values(), key=lambda im: im.name)
    return model.cameras[ims[0].camera_id], [im.pose for im in ims]


def load_colmap(folder: Path) -> ColmapModel:
    texts = []
    for name in ("cameras.txt", "images.txt", "points3D.txt"):
        p = folder / name
        texts.append(p.read_text() if p.exists() else "")
    if not texts[2]:
        raise DataError(f"no points3D.txt in {folder}")
    return parse_colmap_text(*texts)


def load_scene(cfg, *dirs):
    from .synth import default_scene
    candidates = [Path(cfg["paths"]["scene"])] if cfg["paths"]["scene"] else [Path(d) / "scene.json" for d in dirs]
    for p in candidates:
        if p.exists():
            meta = json.loads(p.read_text())
            scene = default_scene(int(meta["frames"]))
            if meta.get("static"):
                scene.dynamic = None
            return scene
    raise ConfigError("the oracle needs the synthetic scene description (paths.scene or scene.json)")


def write_pose_files(out: Path, poses, k: Intrinsics) -> None:
    (out / "intrinsics.json").write_text(json.dumps(k.to_dict(), indent=2) + "\n")
    for t, p in enumerate(poses):
        (out / f"pose_{t:04d}.json").write_text(json.dumps(p.to_dict(), indent=2) + "\n")


def contact_sheet(images, cols: int = 4) -> np.ndarray:
    """Frames tiled row-major into one image, with a 1 px white gutter."""
    ims = [np.repeat(i[..., None], 3, -1) if i.ndim == 2 else i for i in images]
    h, w = ims[0].shape[:2]
    cols = max(1, min(cols, len(ims)))
    rows = -(-len(ims) // cols)
    sheet = np.ones((rows * (h + 1) - 1, cols * (w + 1) - 1, 3))
    for n, im in enumerate(ims):
        r, c = divmod(n, cols)
        sheet[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = im
    return sheet


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def cmd_synth(cfg, args, out: Path) -> dict:
    from .synth import camera_arc, default_intrinsics, default_scene, render_video, sample_sparse, sample_tracks
    s = cfg["synth"]
    k = default_intrinsics(s["width"], s["height"])
    scene = default_scene(s["frames"])
    if s["static"]:
        scene.dynamic = None
    poses = camera_arc(s["frames"])
    imgs, deps = render_video(scene, poses, k)
    rel = AffineDepthParams(1.0 / s["rel_alpha"], -s["rel_beta"] / s["rel_alpha"])
    for t, (img, d) in enumerate(zip(imgs, deps)):
        (out / f"frame_{t:04d}.ppm").write_bytes(write_ppm(img))
        (out / f"depth_{t:04d}.pfm").write_bytes(write_pfm(d))
        # relative depth such that metric = rel_alpha * rel + rel_beta
        r = np.where(valid_depth(d), rel.alpha * d + rel.beta, 0.0)
        (out / f"rel_{t:04d}.pfm").write_bytes(write_pfm(np.where(r > 0, r, 0.0)))
    write_pose_files(out, poses, k)
    sparse = sample_sparse(scene, poses, k, s["sparse_points"], cfg["seed"])
    model = ColmapModel({1: k}, {t + 1: ColmapImage(p, 1, f"frame_{t:04d}.ppm") for t, p in enumerate(poses)},
                        sparse)
    for name, text in zip(("cameras.txt", "images.txt", "points3D.txt"), write_colmap_text(model)):
        (out / name).write_text(text)
    tracks = sample_tracks(scene, poses, k, s["track_stride"])
    (out / "tracks.txt").write_text(write_tracks(tracks))
    write_json(out / "scene.json", {"frames": s["frames"], "static": bool(s["static"])})
    (out / "sheet.ppm").write_bytes(write_ppm(contact_sheet(imgs)))
    return {"frames": len(imgs), "sparse_points": len(sparse), "tracks": tracks.n_tracks,
            "rel_affine": [s["rel_alpha"], s["rel_beta"]]}


def cmd_curate(cfg, args, out: Path) -> dict:
    frames_dir = _dir(cfg, "frames")
    tracks_path = Path(cfg["paths"]["tracks"]) if cfg["paths"]["tracks"] else _dir(cfg, "input") / "tracks.txt"
    tracks = read_tracks(tracks_path.read_text())
    frames = _read_all(_numbered(frames_dir, "frame", "ppm"), read_ppm)
    if len(frames) != tracks.n_frames:
        raise DataError(f"{len(frames)} frames but tracks cover {tracks.n_frames}")
    h, w = frames[0].shape[:2]
    c = cfg["curate"]
    radius = c["footprint"] if c["footprint"] is not None else default_footprint(cfg["synth"]["track_stride"])
    masks = masks_from_tracks(tracks, w, h, radius)
    for t, (f, m) in enumerate(zip(frames, masks)):
        (out / f"mask_{t:04d}.pgm").write_bytes(write_mask(m))
        (out / f"masked_{t:04d}.ppm").write_bytes(write_ppm(apply_mask(f, m)))
    rep = curate(masks, c["tau"], c["mode"])
    write_json(out / "curation.json", rep.to_dict())
    (out / "sheet.ppm").write_bytes(write_ppm(contact_sheet([apply_mask(f, m) for f, m in zip(frames, masks)])))
    return {"frames": len(frames), "tracks": tracks.n_tracks, "footprint_radius": radius, **rep.to_dict()}


def cmd_align(cfg, args, out: Path) -> dict:
    frames_dir = _dir(cfg, "frames")
    depth_dir = _dir(cfg, "depths")
    colmap_dir = _dir(cfg, "colmap")
    k, poses = load_camera(frames_dir, colmap_dir)
    files = sorted(depth_dir.glob("rel_[0-9][0-9][0-9][0-9].pfm")) or _numbered(depth_dir, "depth", "pfm")
    rels = _read_all(files, read_pfm)
    if len(rels) != len(poses):
        raise DataError(f"{len(rels)} relative depth maps but {len(poses)} poses")
    sparse = load_colmap(colmap_dir).points
    a = cfg["align"]
    per_frame = []
    for t, (rel, pose) in enumerate(zip(rels, poses)):
        res = align_frame(rel, pose, k, sparse, cfg["seed"], iterations=a["iterations"],
                          sample_size=a["sample_size"], stride=a["stride"])
        (out / f"depth_{t:04d}.pfm").write_bytes(write_pfm(res.depth))
        per_frame.append({"frame": t, "alpha": res.params.alpha, "beta": res.params.beta,
                          "chamfer": float(res.candidates[res.best_index, 2]), "best_index": res.best_index})
        if args.debug_scores:
            rows = [[float(v) if math.isfinite(v) else None for v in row] for row in res.candidates]
            write_json(out / f"scores_{t:04d}.json", {"frame": t, "columns": ["alpha", "beta", "chamfer"],
                                                      "candidates": rows})
    write_pose_files(out, poses, k)
    alphas = [f["alpha"] for f in per_frame]
    betas = [f["beta"] for f in per_frame]
    return {"frames": len(per_frame), "per_frame": per_frame, "sparse_points": len(sparse),
            "median_alpha": float(np.median(alphas)), "median_beta": float(np.median(betas))}


def cmd_warp(cfg, args, out: Path) -> dict:
    frames_dir = _dir(cfg, "frames")
    depth_dir = _dir(cfg, "depths")
    k, poses = load_camera(frames_dir, _dir(cfg, "colmap"))
    frames = _read_all(_numbered(frames_dir, "frame", "ppm"), read_ppm)
    depths = _read_all(_numbered(depth_dir, "depth", "pfm"), read_pfm)
    if not len(frames) == len(depths) == len(poses):
        raise DataError(f"{len(frames)} frames, {len(depths)} depth maps, {len(poses)} poses")
    w = cfg["warp"]
    center = w["center_depth"] or _median_depth(depths)
    angle = w["angle"]
    dst = [orbit_targets(p, k, center, 2, abs(angle))[1 if angle > 0 else 0] for p in poses]
    cover, sheet = [], []
    for t, (img, d, p, q) in enumerate(zip(frames, depths, poses, dst)):
        wf = forward_warp(img, d, p, q, k)
        (out / f"frame_{t:04d}.ppm").write_bytes(write_ppm(wf.image))
        (out / f"mask_{t:04d}.pgm").write_bytes(write_mask(wf.mask))
        (out / f"zbuf_{t:04d}.pfm").write_bytes(write_pfm(wf.zbuffer))
        cover.append(wf.coverage / wf.mask.size)
        sheet.append(wf.image)
    write_pose_files(out, dst, k)
    _copy_scene(cfg, frames_dir, out)
    (out / "sheet.ppm").write_bytes(write_ppm(contact_sheet(sheet)))
    return {"frames": len(frames), "angle": angle, "center_depth": center,
            "coverage": cover, "mean_coverage": float(np.mean(cover))}


def _median_depth(depths) -> float:
    vals = np.concatenate([d[valid_depth(d)] for d in depths])
    if not len(vals):
        raise DataError("no valid depth in the input")
    return float(np.median(vals))


def _copy_scene(cfg, src: Path, out: Path) -> None:
    p = Path(cfg["paths"]["scene"]) if cfg["paths"]["scene"] else src / "scene.json"
    if p.exists():
        (out / "scene.json").write_bytes(p.read_bytes())


def _backend(cfg, k, *dirs):
    name = cfg["inpaint"]["backend"]
    scene = load_scene(cfg, *dirs) if name == "oracle" else None
    return resolve_backend(name, scene, k)


def cmd_inpaint(cfg, args, out: Path) -> dict:
    frames_dir = _dir(cfg, "frames")
    mask_dir = _dir(cfg, "masks", str(frames_dir))
    frames = _read_all(_numbered(frames_dir, "frame", "ppm"), read_ppm)
    masks = [read_mask(f.read_bytes()) for f in _numbered(mask_dir, "mask", "pgm")]
    anchors = frames
    if cfg["paths"]["anchors"]:
        anchors = _read_all(_numbered(Path(cfg["paths"]["anchors"]), "frame", "ppm"), read_ppm)
    if not len(frames) == len(masks) == len(anchors):
        raise DataError(f"{len(frames)} frames, {len(masks)} masks, {len(anchors)} anchors")
    poses, k = None, None
    if (frames_dir / "intrinsics.json").exists():
        k, poses = load_camera(frames_dir)
        if len(poses) != len(frames):
            poses = None
    try:
        req = InpaintRequest(frames, masks, anchors, poses=poses)
    except ValueError as e:
        raise DataError(str(e)) from None
    if cfg["inpaint"]["backend"] == "oracle" and k is None:
        raise ConfigError("the oracle backend needs intrinsics.json and pose files next to the frames")
    backend = _backend(cfg, k, frames_dir)
    res = inpaint(req, backend, cfg["inpaint"]["window"], cfg["inpaint"]["overlap"])
    for t, f in enumerate(res.video):
        (out / f"frame_{t:04d}.ppm").write_bytes(write_ppm(f))
    if k is not None:
        write_pose_files(out, poses, k)
    (out / "sheet.ppm").write_bytes(write_ppm(contact_sheet(res.video)))
    holes = [int((m == 0).sum()) for m in masks]
    return {"frames": len(frames), "hole_pixels": holes, "backend": cfg["inpaint"]["backend"]}


def cmd_augment(cfg, args, out: Path) -> dict:
    frames_dir = _dir(cfg, "frames")
    depth_dir = _dir(cfg, "depths")
    k, poses = load_camera(frames_dir, _dir(cfg, "colmap"))
    frames = _read_all(_numbered(frames_dir, "frame", "ppm"), read_ppm)
    depths = _read_all(_numbered(depth_dir, "depth", "pfm"), read_pfm)
    if not len(frames) == len(depths) == len(poses):
        raise DataError(f"{len(frames)} frames, {len(depths)} depth maps, {len(poses)} poses")
    a = cfg["augment"]
    center = a["center_depth"] or _median_depth(depths)
    targets = aug.TargetPoseSet.orbit(poses, k, center, a["H"], a["max_angle"])
    backend = _backend(cfg, k, frames_dir, depth_dir)
    provider = None
    if a["depth"] == "oracle":
        provider = aug.OracleDepth(load_scene(cfg, frames_dir, depth_dir), k, a["depth_noise"])
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    buf, recs = aug.run_augmentation(aug.BufferEntry(frames, depths, poses), targets, a["N"], backend, k,
                                     cfg["seed"], depth_provider=provider, window=cfg["inpaint"]["window"],
                                     overlap=cfg["inpaint"]["overlap"], peripheral=a["peripheral"],
                                     radius=a["radius"], depth_tol=a["depth_tol"], log=log)
    # the output location is not part of the run's content, so leave it out of the manifest
    echo = copy.deepcopy(cfg)
    echo["paths"].pop("output")
    aug.save_buffer(buf, out, recs, {"seed": cfg["seed"], "config": echo, "H": a["H"], "N": a["N"]})
    sheet = [e.video[0] for e in buf.entries] + [r.masks[0] for r in recs]
    (out / "sheet.ppm").write_bytes(write_ppm(contact_sheet(sheet, len(buf.entries))))
    return {"entries": len(buf), "videos_per_iteration": a["H"] // a["N"], "iterations": a["N"],
            "visited": int(sum(len(e) for e in buf.entries[1:])), "targets": a["H"] * buf.T,
            "all_visited": int(sum(len(e) for e in buf.entries[1:])) == a["H"] * buf.T,
            "supervised_fraction": [float(np.mean([m.mean() for m in r.masks])) for r in recs]}


def cmd_eval(cfg, args, out: Path) -> dict:
    pred_dir = _dir(cfg, "frames")
    ref = cfg["paths"]["reference"]
    if ref is None:
        raise ConfigError("paths.reference: eval needs a directory of reference frames")
    preds = _read_all(_numbered(pred_dir, "frame", "ppm"), read_ppm)
    refs = _read_all(_numbered(Path(ref), "frame", "ppm"), read_ppm)
    if len(preds) != len(refs):
        raise DataError(f"{len(preds)} predicted frames but {len(refs)} references")
    if cfg["paths"]["masks"]:
        masks = [read_mask(f.read_bytes()) for f in _numbered(Path(cfg["paths"]["masks"]), "mask", "pgm")]
        if len(masks) != len(preds):
            raise DataError(f"{len(masks)} masks for {len(preds)} frames")
    else:
        masks = [np.ones(p.shape[:2], np.uint8) for p in preds]
    lw = cfg["losses"]
    radius = lw["radius"]
    weights = LossWeights(lw["lambda_r"], lw["lambda_s"], lw["lambda_l"])
    rows = []
    for t, (p, r, m) in enumerate(zip(preds, refs, masks)):
        if p.shape != r.shape:
            raise DataError(f"frame {t}: shapes {p.shape} and {r.shape} differ")
        if not m.any():
            rows.append({"frame": t, "psnr": None, "ssim": None, "iv": None, "objective": None,
                         "empty_mask": True})
            continue
        rows.append({"frame": t, "psnr": masked_psnr(p, r, m), "ssim": masked_ssim(p, r, m),
                     "iv": iv_loss(p, r, m, radius).value,
                     "objective": augmented_objective(p, r, m, weights, radius=radius), "empty_mask": False})
    scored = [r for r in rows if not r["empty_mask"]]
    mean = {key: float(np.mean([r[key] for r in scored])) if scored else None for key in ("psnr", "ssim", "iv", "objective")}
    return {"frames": len(rows), "per_frame": rows, "mean": mean}


COMMANDS = {"synth": cmd_synth, "curate": cmd_curate, "align": cmd_align, "warp": cmd_warp,
            "inpaint": cmd_inpaint, "augment": cmd_augment, "eval": cmd_eval}


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="viewaug", description="View augmentation pipeline for monocular video.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field, e.g. --set augment.N=3 (value parsed as JSON)")
    common.add_argument("--seed", type=int)
    common.add_argument("--input", help="directory holding every input unless a specific path is given")
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="render a synthetic capture")
    c = sub.add_parser("curate", parents=[common], help="training masks from point tracks")
    c.add_argument("--frames")
    c.add_argument("--tracks")
    a = sub.add_parser("align", parents=[common], help="align relative depth to the sparse cloud")
    a.add_argument("--frames")
    a.add_argument("--depths")
    a.add_argument("--colmap")
    a.add_argument("--debug-scores", action="store_true", help="write every RANSAC candidate per frame")
    w = sub.add_parser("warp", parents=[common], help="forward-warp frames to an orbit pose")
    w.add_argument("--frames")
    w.add_argument("--depths")
    i = sub.add_parser("inpaint", parents=[common], help="fill warp holes")
    i.add_argument("--frames")
    i.add_argument("--masks")
    i.add_argument("--anchors")
    i.add_argument("--scene")
    i.add_argument("--backend", help="pullpush, oracle or extern:<cmd>")
    g = sub.add_parser("augment", parents=[common], help="run the iterative augmentation")
    g.add_argument("--frames")
    g.add_argument("--depths")
    g.add_argument("--scene")
    g.add_argument("--backend", help="pullpush, oracle or extern:<cmd>")
    e = sub.add_parser("eval", parents=[common], help="masked PSNR, SSIM and IV loss against references")
    e.add_argument("--frames", help="predicted frames")
    e.add_argument("--reference")
    e.add_argument("--masks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as e:
        print(f"viewaug: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["paths"]["output"])
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args, out)
        code, error = EXIT_OK, None
    except ConfigError as e:
        code, error, result = EXIT_USAGE, f"config error: {e}", {}
    except aug.PlanError as e:
        code, error, result = EXIT_USAGE, f"plan error: {e}", {}
    except (FormatError, DataError, OSError, json.JSONDecodeError, KeyError) as e:
        code, error, result = EXIT_DATA, f"data error: {e}", {}
    except (AlignmentFailedError, SingularFitError, InsufficientObservationsError, FloatingPointError) as e:
        code, error, result = EXIT_NUMERIC, f"numeric failure: {e}", {}
    except (InpaintError, aug.AugmentError) as e:
        code, error, result = EXIT_BACKEND, f"backend failure: {e}", {}
    report = {"command": args.command, "config": cfg, "status": "ok" if code == 0 else "error",
              "exit_code": code, "error": error, "result": result,
              "timings": {"seconds": round(time.perf_counter() - start, 6)}}
    if out.is_dir():
        write_json(out / "report.json", report)
    if error:
        print(f"viewaug {args.command}: {error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
