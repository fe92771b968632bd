"""
Postprocessing: flood extent of the peak depth raster.

Usage: ``extent --threshold 0.15`` inside the sandbox; reads
``depth_max.asc`` and writes the 1/0 raster ``extent.asc`` (nodata kept).
"""

import argparse
import logging
import sys
from typing import List, Optional

from ..science.raster import read_ascii
from ..science.risk_metrics import DEFAULT_THRESHOLD, extent_mask
from ._wrapper import EXIT_USAGE, UsageError, run_module, sandbox_file

logger = logging.getLogger("cimf-extent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimf-extent", description="Flood extent above a depth threshold")
    parser.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD, help="Depth threshold in meters")
    parser.add_argument("--input", default="depth_max.asc")
    parser.add_argument("--output", default="extent.asc")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0

    def _run(_params) -> None:
        if args.threshold < 0:
            raise UsageError(f"threshold must be >= 0, got {args.threshold}")
        depth = read_ascii(sandbox_file(args.input))
        depth.check_depths()
        mask = extent_mask(depth, args.threshold)
        sandbox_file(args.output).write_bytes(mask.to_raster(depth).to_bytes())
        logger.info(f"{mask.cells} cells at or above {args.threshold} m")

    return run_module("cimf-extent", _run, params={})


if __name__ == "__main__":
    sys.exit(main())
