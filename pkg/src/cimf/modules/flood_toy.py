"""
Reference flood model under the sandbox contract.

Inputs ``dem.asc`` and ``precip.csv``; outputs ``depth.asc`` (final depth),
``depth_max.asc`` (per-cell peak), ``daily_max.json`` (per-day peaks) and
``budget.json`` (volumes in m3). A budget that does not close fails the step.
"""

import logging
import sys
from typing import Any, Dict

from ..core.errors import ModelError
from ..science.flood_model import FloodParams, PrecipSeries, simulate
from ..science.raster import read_ascii, series_to_json
from ._wrapper import UsageError, run_module, sandbox_file, write_json

logger = logging.getLogger("flood-toy")


def _run(params: Dict[str, Any]) -> None:
    try:
        flood_params = FloodParams.from_dict(params)
    except ModelError as e:
        raise UsageError(str(e)) from e
    dem = read_ascii(sandbox_file("dem.asc"))
    precip = PrecipSeries.from_csv(sandbox_file("precip.csv").read_text(encoding="utf-8"))
    result = simulate(dem, precip, flood_params)
    if not result.budget.closes():
        raise ModelError(f"Water budget does not close: relative error {result.budget.relative_error:.3e}")

    sandbox_file("depth.asc").write_bytes(result.depth.to_bytes())
    sandbox_file("depth_max.asc").write_bytes(result.depth_max.to_bytes())
    sandbox_file("daily_max.json").write_bytes(series_to_json(result.daily_max))
    write_json("budget.json", result.budget.to_dict())
    logger.info(f"Simulated {len(precip)} timesteps; stored {result.budget.stored:.6g} m3")


def main() -> int:
    return run_module("flood-toy", _run)


if __name__ == "__main__":
    sys.exit(main())
