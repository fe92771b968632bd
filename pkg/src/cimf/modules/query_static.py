"""
Static data query: clip a source DEM to the requested bounding box.

Keeps the rows and columns whose cell centres fall inside the box
(inclusive bounds). ``crs_label`` is carried opaquely; no reprojection.
"""

import logging
import sys
from typing import Any, Dict

from ..science.raster import Raster, RasterHeader, read_ascii
from ._wrapper import UsageError, require, run_module, sandbox_file

logger = logging.getLogger("cimf-query-static")

SOURCE = "dem_source.asc"
OUTPUT = "dem_clip.asc"


def clip_to_bbox(dem: Raster, min_x: float, min_y: float, max_x: float, max_y: float) -> Raster:
    """
    Clip a raster to the cells whose centres lie inside the box.

    Raises:
        ValueError: If no cell centre lies inside the box
    """
    h = dem.header
    cols = [c for c in range(h.ncols) if min_x <= h.xllcorner + (c + 0.5) * h.cellsize <= max_x]
    rows = [r for r in range(h.nrows) if min_y <= h.yllcorner + (h.nrows - r - 0.5) * h.cellsize <= max_y]
    if not cols or not rows:
        raise ValueError(f"bbox [{min_x}, {min_y}, {max_x}, {max_y}] does not cover the source grid")
    header = RasterHeader(
        ncols=len(cols),
        nrows=len(rows),
        xllcorner=h.xllcorner + cols[0] * h.cellsize,
        yllcorner=h.yllcorner + (h.nrows - 1 - rows[-1]) * h.cellsize,
        cellsize=h.cellsize,
        nodata_value=h.nodata_value,
    )
    values = dem.values[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    return Raster(header, values.copy())


def _run(params: Dict[str, Any]) -> None:
    box = [float(require(params, key)) for key in ("bbox_min_x", "bbox_min_y", "bbox_max_x", "bbox_max_y")]
    if not (box[0] < box[2] and box[1] < box[3]):
        raise UsageError(f"degenerate bbox {box}")
    dem = read_ascii(sandbox_file(SOURCE))
    clipped = clip_to_bbox(dem, *box)
    sandbox_file(OUTPUT).write_bytes(clipped.to_bytes())
    logger.info(f"Clipped {dem.shape} to {clipped.shape} (crs {params.get('crs_label') or 'unspecified'})")


def main() -> int:
    return run_module("cimf-query-static", _run)


if __name__ == "__main__":
    sys.exit(main())
