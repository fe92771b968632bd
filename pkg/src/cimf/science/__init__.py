"""
Raster I/O, ensemble risk metrics and the reference flood model.
"""

from .flood_model import FloodParams, FloodResult, PrecipSeries, WaterBudget, simulate
from .raster import AlignmentError, Raster, RasterError, RasterHeader, read_ascii, write_ascii
from .risk_metrics import (
    Contingency,
    EnsembleStack,
    ExtentMask,
    IoU,
    MetricSpec,
    contingency,
    days_above_threshold,
    ensemble_metric,
    exceedance_probability,
    extent_mask,
    iou,
    max_depth,
)
from .synthetic import storm, storm_members, synthetic_dem, truth_extent

__all__ = [
    "AlignmentError",
    "Contingency",
    "EnsembleStack",
    "ExtentMask",
    "FloodParams",
    "FloodResult",
    "IoU",
    "MetricSpec",
    "PrecipSeries",
    "Raster",
    "RasterError",
    "RasterHeader",
    "WaterBudget",
    "contingency",
    "days_above_threshold",
    "ensemble_metric",
    "exceedance_probability",
    "extent_mask",
    "iou",
    "max_depth",
    "read_ascii",
    "simulate",
    "storm",
    "storm_members",
    "synthetic_dem",
    "truth_extent",
    "write_ascii",
]
