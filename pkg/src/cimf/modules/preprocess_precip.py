"""
Precipitation preprocessing: convert a rain series to model units.

Reads ``t,rate`` lines, converts ``mm/h`` to ``m/h`` when asked, applies
``scale`` and optionally truncates or zero-pads to ``n_steps`` timesteps.
Negative or non-finite rates fail the step.
"""

import logging
import sys
from typing import Any, Dict

from ..science.flood_model import PrecipSeries
from ._wrapper import UsageError, run_module, sandbox_file

logger = logging.getLogger("cimf-preprocess-precip")

SOURCE = "precip_source.csv"
OUTPUT = "precip.csv"
UNIT_FACTORS = {"m/h": 1.0, "mm/h": 0.001}


def prepare(series: PrecipSeries, scale: float = 1.0, units: str = "m/h", n_steps: int = 0) -> PrecipSeries:
    if units not in UNIT_FACTORS:
        raise UsageError(f"units must be one of {sorted(UNIT_FACTORS)}, got {units!r}")
    if scale < 0:
        raise UsageError(f"scale must be >= 0, got {scale}")
    factor = UNIT_FACTORS[units] * scale
    rates = [r * factor for r in series.rates]
    if n_steps > 0:
        rates = (rates + [0.0] * n_steps)[:n_steps]
    return PrecipSeries(rates=tuple(rates), start=series.start)


def _run(params: Dict[str, Any]) -> None:
    series = PrecipSeries.from_csv(sandbox_file(SOURCE).read_text(encoding="utf-8"))
    prepared = prepare(
        series,
        scale=float(params.get("scale", 1.0)),
        units=str(params.get("units", "m/h")),
        n_steps=int(params.get("n_steps", 0)),
    )
    sandbox_file(OUTPUT).write_text(prepared.to_csv(), encoding="utf-8")
    logger.info(f"Prepared {len(prepared)} precipitation timesteps")


def main() -> int:
    return run_module("cimf-preprocess-precip", _run)


if __name__ == "__main__":
    sys.exit(main())
