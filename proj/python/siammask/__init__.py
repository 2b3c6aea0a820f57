"""Python access to the SiamMask C++ core."""

from ._core import (
    ConfigError,
    EmptyMaskError,
    ShapeError,
    Tracker,
    contour_fmeasure,
    curve_stats,
    hungarian,
    iou_mask,
    iou_rotated,
    mbr,
    min_max_box,
    random_sequence,
    response_shapes,
    run_cli,
)

__all__ = [
    "ConfigError",
    "EmptyMaskError",
    "ShapeError",
    "Tracker",
    "contour_fmeasure",
    "curve_stats",
    "hungarian",
    "iou_mask",
    "iou_rotated",
    "mbr",
    "min_max_box",
    "random_sequence",
    "response_shapes",
    "run_cli",
]
