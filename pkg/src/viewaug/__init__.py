"""Geometric view augmentation for monocular dynamic-scene video."""
from .augment import (BufferEntry, DataBuffer, GlobalPointCloud, OracleDepth, PropagatedDepth, TargetPoseSet,
                      run_augmentation)
from .depth_align import AffineDepthParams, align_depth_ransac, align_frame
from .geom import Intrinsics, Pose
from .inpaint import InpaintRequest, chunk_schedule, inpaint, pullpush_fill
from .losses import LossWeights, augmented_objective, iv_loss, masked_psnr, masked_ssim
from .trackmask import curate, masks_from_tracks
from .warp import forward_warp

__version__ = "0.1.0"

__all__ = [
    "AffineDepthParams", "BufferEntry", "DataBuffer", "GlobalPointCloud", "InpaintRequest", "Intrinsics",
    "LossWeights", "OracleDepth", "Pose", "PropagatedDepth", "TargetPoseSet", "align_depth_ransac",
    "align_frame", "augmented_objective", "chunk_schedule", "curate", "forward_warp", "inpaint", "iv_loss",
    "masked_psnr", "masked_ssim", "masks_from_tracks", "pullpush_fill", "run_augmentation",
]
