"""Two-stage segmentation data enhancement.

A first model's predictions (segmentation probabilities or edge maps) are
fused into the input images of a second model, and the result is scored
with IoU and Boundary IoU.
"""
from .enhance import EnhanceConfig, EnhancedSample, Mode, Variant, enhance_sample
from .metrics import MetricsConfig, MetricsReport, boundary_iou, compare_runs, evaluate_dataset, iou
from .morphology import Disk, Square, boundary_band, dilate, erode
from .raster import Domain, Raster, read_raster, to_u8, to_unit, write_raster

__version__ = "0.1.0"

__all__ = [
    "Disk",
    "Domain",
    "EnhanceConfig",
    "EnhancedSample",
    "MetricsConfig",
    "MetricsReport",
    "Mode",
    "Raster",
    "Square",
    "Variant",
    "boundary_band",
    "boundary_iou",
    "compare_runs",
    "dilate",
    "enhance_sample",
    "erode",
    "evaluate_dataset",
    "iou",
    "read_raster",
    "to_u8",
    "to_unit",
    "write_raster",
]
