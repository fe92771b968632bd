"""
Static preprocessing: make a clipped DEM model-ready.

Interior nodata holes are filled with the mean of their valid
4-neighbours, repeated until no hole remains. Nodata connected to the grid
edge is kept as the open-boundary collar.
"""

import logging
import sys
from typing import Any, Dict

import numpy as np

from ..science.flood_model import interior_nodata
from ..science.raster import Raster, read_ascii
from ._wrapper import UsageError, run_module, sandbox_file

logger = logging.getLogger("cimf-preprocess-static")

SOURCE = "dem_clip.asc"
OUTPUT = "dem.asc"


def fill_holes(dem: Raster, max_passes: int = 1000) -> Raster:
    """
    Fill interior nodata cells by repeated neighbour averaging.

    Raises:
        ValueError: If holes remain after `max_passes`
    """
    values = dem.values.copy()
    nodata = dem.header.nodata_value
    holes = interior_nodata(dem)
    nrows, ncols = values.shape
    passes = 0
    while holes.any():
        if passes >= max_passes:
            raise ValueError(f"{int(holes.sum())} holes remain after {max_passes} passes")
        filled = []
        for r, c in zip(*np.nonzero(holes)):
            neighbours = [
                values[rr, cc]
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                if 0 <= rr < nrows and 0 <= cc < ncols and values[rr, cc] != nodata and not holes[rr, cc]
            ]
            if neighbours:
                filled.append((r, c, float(np.mean(neighbours))))
        for r, c, value in filled:
            values[r, c] = value
            holes[r, c] = False
        passes += 1
    return dem.like(values)


def _run(params: Dict[str, Any]) -> None:
    max_passes = int(params.get("max_fill_passes", 1000))
    if max_passes < 1:
        raise UsageError("max_fill_passes must be >= 1")
    dem = read_ascii(sandbox_file(SOURCE))
    before = int(interior_nodata(dem).sum())
    sandbox_file(OUTPUT).write_bytes(fill_holes(dem, max_passes).to_bytes())
    logger.info(f"Filled {before} interior nodata cells")


def main() -> int:
    return run_module("cimf-preprocess-static", _run)


if __name__ == "__main__":
    sys.exit(main())
