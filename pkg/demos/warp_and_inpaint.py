"""Move the camera, see what the warp leaves behind, then fill it in.

Writes a contact sheet to ``warp_and_inpaint.ppm`` in the working directory: source, warped view,
pull-push fill, oracle fill and the true render at the new pose.
"""
from pathlib import Path

import numpy as np

from viewaug.cli import contact_sheet
from viewaug.formats import write_ppm
from viewaug.geom import orbit_targets
from viewaug.inpaint import InpaintRequest, OracleBackend, inpaint
from viewaug.synth import camera_arc, default_intrinsics, default_scene, render
from viewaug.warp import forward_warp

k = default_intrinsics(128, 128)
scene, poses = default_scene(), camera_arc()
t = 8
src, depth = render(scene, poses[t], k, t)
dst = orbit_targets(poses[t], k, 2.7, 2, np.deg2rad(15))[1]
truth, _ = render(scene, dst, k, t)

wf = forward_warp(src, depth, poses[t], dst, k)
print(f"warp covers {wf.coverage / wf.mask.size:.1%} of the new view")

req = InpaintRequest([wf.image], [wf.mask], [src], frame_indices=[t], poses=[dst])
fills = {"pullpush": inpaint(req, "pullpush").video[0], "oracle": inpaint(req, OracleBackend(scene, k)).video[0]}
hole = wf.mask == 0
for name, img in fills.items():
    print(f"{name:8s} mean abs error inside the holes: {np.abs(img - truth)[hole].mean():.4f}")

out = Path("warp_and_inpaint.ppm")
out.write_bytes(write_ppm(contact_sheet([src, wf.image, fills["pullpush"], fills["oracle"], truth], cols=5)))
print(f"wrote {out}")
