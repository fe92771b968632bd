"""
Calibration objective: agreement of a predicted extent with an observed one.

Both rasters are read as boolean extents (value >= 0.5, nodata is dry).
Writes ``iou.json`` with the IoU, its empty-union flag and the contingency
scores (POD, FAR, CSI).
"""

import logging
import sys
from typing import Any, Dict

from ..science.raster import AlignmentError, read_ascii
from ..science.risk_metrics import contingency, extent_mask, iou
from ._wrapper import run_module, sandbox_file, write_json

logger = logging.getLogger("cimf-iou")

MASK_THRESHOLD = 0.5


def _run(params: Dict[str, Any]) -> None:
    predicted = read_ascii(sandbox_file("predicted.asc"))
    truth = read_ascii(sandbox_file("truth.asc"))
    if not predicted.aligned_with(truth):
        raise AlignmentError(f"Ground truth grid {truth.header.to_dict()} is not aligned with prediction "
                             f"{predicted.header.to_dict()}")
    a = extent_mask(predicted, MASK_THRESHOLD)
    b = extent_mask(truth, MASK_THRESHOLD)
    score = iou(a.mask, b.mask)
    table = contingency(a.mask, b.mask)
    document = {
        "iou": score.value,
        "intersection": score.intersection,
        "union": score.union,
        "empty_union": score.empty_union,
        "contingency": table.to_dict(),
    }
    write_json("iou.json", document)
    logger.info(f"IoU {score.value:.4f} ({score.intersection}/{score.union})")


def main() -> int:
    return run_module("cimf-iou", _run)


if __name__ == "__main__":
    sys.exit(main())
