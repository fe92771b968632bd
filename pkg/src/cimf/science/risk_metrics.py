"""
Ensemble flood-risk metrics over aligned depth rasters.

All thresholds compare inclusively (value >= threshold). A cell that is
nodata in any member is nodata in probability, maximum and count outputs;
extent masks map nodata to False and report how many cells that affected.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .raster import AlignmentError, Raster, RasterHeader, check_aligned

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.15  # meters

METRICS = ("exceedance_probability", "days_above_threshold", "max_depth")
REDUCTIONS = ("max_over_time", "count_days_over_threshold")


@dataclass
class EnsembleStack:
    """Ordered, aligned member rasters with unique labels."""
    members: List[Raster]
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("Ensemble stack must contain at least one member")
        if not self.labels:
            self.labels = [str(i) for i in range(len(self.members))]
        if len(self.labels) != len(self.members):
            raise ValueError("One label per member is required")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("Member labels must be unique")
        check_aligned(self.members)

    @property
    def header(self) -> RasterHeader:
        return self.members[0].header

    def __len__(self) -> int:
        return len(self.members)

    def cube(self) -> np.ndarray:
        """Members stacked along axis 0."""
        return np.stack([m.values for m in self.members])

    def nodata_any(self) -> np.ndarray:
        return np.any(self.cube() == self.header.nodata_value, axis=0)


@dataclass(frozen=True)
class MetricSpec:
    metric: str = "exceedance_probability"
    threshold: float = DEFAULT_THRESHOLD
    per_member_reduction: Optional[str] = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"Unknown metric {self.metric!r}; expected one of {METRICS}")
        if not self.threshold >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.per_member_reduction is not None and self.per_member_reduction not in REDUCTIONS:
            raise ValueError(f"Unknown per_member_reduction {self.per_member_reduction!r}")
        if self.metric == "days_above_threshold" and self.reduction != "count_days_over_threshold":
            raise ValueError("days_above_threshold needs the count_days_over_threshold reduction")
        if self.metric != "days_above_threshold" and self.reduction != "max_over_time":
            raise ValueError(f"{self.metric} needs the max_over_time reduction")

    @property
    def reduction(self) -> str:
        if self.per_member_reduction:
            return self.per_member_reduction
        return "count_days_over_threshold" if self.metric == "days_above_threshold" else "max_over_time"

    @property
    def needs_series(self) -> bool:
        return self.reduction == "count_days_over_threshold"


def _check_threshold(threshold: float) -> None:
    if not threshold >= 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")


def exceedance_probability(stack: EnsembleStack, threshold: float = DEFAULT_THRESHOLD) -> Raster:
    """
    Per-cell fraction of members whose value meets or exceeds the threshold.

    Args:
        stack: Aligned member rasters
        threshold: Depth threshold in meters

    Returns:
        Raster of probabilities in [0, 1]
    """
    _check_threshold(threshold)
    cube = stack.cube()
    counts = np.count_nonzero(cube >= threshold, axis=0)
    probability = counts / len(stack)
    probability[stack.nodata_any()] = stack.header.nodata_value
    return Raster(stack.header, probability)


def max_depth(stack: EnsembleStack) -> Raster:
    """Per-cell maximum over members."""
    values = np.max(stack.cube(), axis=0)
    values[stack.nodata_any()] = stack.header.nodata_value
    return Raster(stack.header, values)


def days_above_threshold(series: Sequence[Raster], threshold: float = DEFAULT_THRESHOLD) -> Raster:
    """
    Per-cell count of days whose value meets or exceeds the threshold.

    Args:
        series: Aligned daily rasters of one member
        threshold: Depth threshold in meters
    """
    _check_threshold(threshold)
    if not series:
        raise ValueError("Daily series must not be empty")
    header = check_aligned(series)
    cube = np.stack([r.values for r in series])
    counts = np.count_nonzero(cube >= threshold, axis=0).astype(np.float64)
    counts[np.any(cube == header.nodata_value, axis=0)] = header.nodata_value
    return Raster(header, counts)


@dataclass
class ExtentMask:
    mask: np.ndarray
    header: RasterHeader
    nodata_count: int = 0

    @property
    def cells(self) -> int:
        return int(np.count_nonzero(self.mask))

    def to_raster(self, source: Optional[Raster] = None) -> Raster:
        """1/0 indicator raster; nodata cells of `source` stay nodata."""
        values = self.mask.astype(np.float64)
        if source is not None:
            values[source.nodata_mask] = self.header.nodata_value
        return Raster(self.header, values)


def extent_mask(raster: Raster, threshold: float = DEFAULT_THRESHOLD) -> ExtentMask:
    """
    Cells whose value meets or exceeds the threshold.

    Nodata cells are False; their number is reported on the result.
    """
    nodata = raster.nodata_mask
    mask = (raster.values >= threshold) & ~nodata
    return ExtentMask(mask=mask, header=raster.header, nodata_count=int(np.count_nonzero(nodata)))


MaskLike = Union[ExtentMask, np.ndarray]


def _mask_pair(predicted: MaskLike, truth: MaskLike):
    if isinstance(predicted, ExtentMask) and isinstance(truth, ExtentMask):
        if predicted.header != truth.header:
            raise AlignmentError("Predicted and truth masks are not on the same grid")
    a = predicted.mask if isinstance(predicted, ExtentMask) else np.asarray(predicted, dtype=bool)
    b = truth.mask if isinstance(truth, ExtentMask) else np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise AlignmentError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True)
class IoU:
    value: float
    intersection: int
    union: int
    empty_union: bool = False

    def __float__(self) -> float:
        return self.value


def iou(predicted: MaskLike, truth: MaskLike) -> IoU:
    """
    Intersection over union of two aligned masks.

    Two empty masks agree perfectly: the value is 1.0 and `empty_union` is set.
    """
    a, b = _mask_pair(predicted, truth)
    intersection = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return IoU(value=1.0, intersection=0, union=0, empty_union=True)
    return IoU(value=intersection / union, intersection=intersection, union=union)


@dataclass(frozen=True)
class Contingency:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    @property
    def pod(self) -> float:
        """Probability of detection; 1.0 when nothing was observed."""
        observed = self.hits + self.misses
        return self.hits / observed if observed else 1.0

    @property
    def far(self) -> float:
        """False alarm ratio; 0.0 when nothing was predicted."""
        predicted = self.hits + self.false_alarms
        return self.false_alarms / predicted if predicted else 0.0

    @property
    def csi(self) -> float:
        """Critical success index (equals IoU on masks)."""
        total = self.hits + self.misses + self.false_alarms
        return self.hits / total if total else 1.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "false_alarms": self.false_alarms,
            "correct_negatives": self.correct_negatives,
            "pod": self.pod,
            "far": self.far,
            "csi": self.csi,
        }


def contingency(predicted: MaskLike, truth: MaskLike) -> Contingency:
    """2x2 contingency table of a predicted extent against an observed one."""
    a, b = _mask_pair(predicted, truth)
    return Contingency(
        hits=int(np.count_nonzero(a & b)),
        misses=int(np.count_nonzero(~a & b)),
        false_alarms=int(np.count_nonzero(a & ~b)),
        correct_negatives=int(np.count_nonzero(~a & ~b)),
    )


def reduce_member(series: Sequence[Raster], reduction: str, threshold: float = DEFAULT_THRESHOLD) -> Raster:
    """Collapse one member's time series to a single raster."""
    if reduction == "max_over_time":
        return max_depth(EnsembleStack(list(series)))
    if reduction == "count_days_over_threshold":
        return days_above_threshold(series, threshold)
    raise ValueError(f"Unknown per_member_reduction {reduction!r}")


def ensemble_metric(members: Dict[str, Sequence[Raster]], spec: MetricSpec) -> Raster:
    """
    Evaluate a metric over an ensemble of member time series.

    Each member is first reduced with the spec's reduction. Exceedance and
    maximum then combine the reduced members; days above threshold is the
    per-cell mean of the members' day counts.

    Args:
        members: Member label -> ordered rasters (a single raster for
            already-reduced members)
        spec: Metric selection
    """
    if not members:
        raise ValueError("Ensemble must contain at least one member")
    labels = sorted(members)
    reduced = [reduce_member(members[label], spec.reduction, spec.threshold) for label in labels]
    stack = EnsembleStack(reduced, labels)
    if spec.metric == "exceedance_probability":
        return exceedance_probability(stack, spec.threshold)
    if spec.metric == "max_depth":
        return max_depth(stack)
    cube = stack.cube()
    mean = np.sum(cube, axis=0) / len(stack)
    mean[stack.nodata_any()] = stack.header.nodata_value
    return Raster(stack.header, mean)
