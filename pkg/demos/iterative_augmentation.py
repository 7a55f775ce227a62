"""Reach far viewpoints in small steps instead of one big jump.

With noisy depth, warping straight to the outermost orbit pose smears more
than hopping there through intermediate, already completed views.
"""
import numpy as np

from viewaug.augment import BufferEntry, OracleDepth, TargetPoseSet, run_augmentation
from viewaug.synth import camera_arc, default_intrinsics, default_scene, render, render_video

T = 8
k = default_intrinsics(96, 96)
scene, poses = default_scene(T), camera_arc(T)
frames, depths = render_video(scene, poses, k)
rng = np.random.default_rng(0)
noisy = [np.where(d > 0, d * (1 + 0.05 * rng.standard_normal(d.shape)), 0.0) for d in depths]
targets = TargetPoseSet.orbit(poses, k, 2.7, 6)


def outer_error(buf):
    errs = []
    for e in buf.entries[1:]:
        for t, i in enumerate(e.target_indices):
            if i in (0, targets.H - 1):
                errs.append(np.abs(e.video[t] - render(scene, e.poses[t], k, t)[0]).mean())
    return np.mean(errs)


for N in (1, 2, 3, 6):
    buf, records = run_augmentation(BufferEntry(frames, noisy, poses), targets, N, "pullpush", k, seed=0,
                                    depth_provider=OracleDepth(scene, k, 0.05))
    supervised = np.mean([m.mean() for r in records for m in r.masks])
    print(f"N={N}: {len(buf) - 1} new videos, {targets.H // N} per iteration, "
          f"outer-pose error {outer_error(buf):.4f}, supervised pixels {supervised:.1%}")
