"""Lane segmentation with consecutive perspective transforms (C++ core)."""

from ._core import (
    Chain,
    ChainStep,
    ConfigError,
    Error,
    Homography,
    Model,
    ViewSpec,
    axis_angle_to_rotation,
    build_chain,
    ground_normal_to_axis_angle,
    horizon_to_ground_normal,
    lanes_from_instances,
    miou,
    render_dataset,
    scale_homography_for_stride,
    tusimple_accuracy,
    tusimple_fp_fn,
    warp,
    warp_adjoint,
)

__all__ = [
    "Chain",
    "ChainStep",
    "ConfigError",
    "Error",
    "Homography",
    "Model",
    "ViewSpec",
    "axis_angle_to_rotation",
    "build_chain",
    "ground_normal_to_axis_angle",
    "horizon_to_ground_normal",
    "lanes_from_instances",
    "miou",
    "render_dataset",
    "scale_homography_for_stride",
    "tusimple_accuracy",
    "tusimple_fp_fn",
    "warp",
    "warp_adjoint",
]
