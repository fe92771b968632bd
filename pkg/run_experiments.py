#!/usr/bin/env python3
"""
Experiment Runner

Desk-scale flood experiments on synthetic inputs, run against an in-process
gateway with a throwaway (or given) store.

Usage:
    python run_experiments.py calibrate     # IoU calibration against a synthetic truth
    python run_experiments.py climatology   # 21-year exceedance probability
    python run_experiments.py forecast      # 10-member forecast
    python run_experiments.py all           # calibration, then both ensembles with the calibrated params
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional

from cimf.core.calibration_service import REPORT_NAME
from cimf.science.flood_model import FloodParams
from cimf.science.synthetic import storm, storm_members, synthetic_dem, truth_extent
from cimf.sdk.config import CimfOptions
from cimf.server.gateway import CimfGateway
from cimf.utils.helpers import configure_logging

GRID_SIZE = 24
TRUTH = FloodParams(infiltration_rate=0.01, routing_coefficient=0.6)
CLIMATOLOGY_YEARS = [f"y{year}" for year in range(2001, 2022)]
FORECAST_MEMBERS = [f"m{i:02d}" for i in range(1, 11)]


def base_payload(workflow_type: str, **options) -> Dict[str, Any]:
    dem = synthetic_dem(GRID_SIZE)
    merged = {"dem": {"inline": dem.to_ascii()}}
    merged.update(options)
    return {
        "workflow_type": workflow_type,
        "spatial_domain": {"bbox": dem.header.bbox, "crs_label": "EPSG:27700"},
        "temporal_domain": {"start": "2021-12-01", "end": "2021-12-31"},
        "options": merged,
    }


def members(labels, seed: int):
    return [{"label": label, "inline": series.to_csv()} for label, series in storm_members(labels, seed).items()]


def run(gateway: CimfGateway, payload: Dict[str, Any]):
    accepted = gateway.submit(payload)
    print(f"Submitted {payload['workflow_type']} as {accepted['run_id']}")
    record = gateway.wait_for(accepted["run_id"])
    counts = {status: n for status, n in record.step_counts().items() if n}
    print(f"   {record.status.value}, steps {counts}")
    return record


def run_calibration(gateway: CimfGateway, iterations: int, sampler: str, batch_width: int) -> Optional[str]:
    print("Calibrating infiltration_rate and routing_coefficient against a synthetic truth extent...")
    truth = truth_extent(synthetic_dem(GRID_SIZE), storm(), TRUTH)
    payload = base_payload(
        "calibration",
        precip={"inline": storm().to_csv()},
        ground_truth={"inline": truth.to_ascii()},
        search_params={"infiltration_rate": [0.0, 0.02], "routing_coefficient": [0.2, 0.9]},
        iterations=iterations,
        sampler=sampler,
        batch_width=batch_width,
        seed=7,
    )
    record = run(gateway, payload)
    if record.status.value != "succeeded":
        return None
    report = json.loads(gateway.results(record.run_id, REPORT_NAME)[0])
    print(f"   IoU {report['initial_iou']:.3f} (defaults) -> {report['best_iou']:.3f} "
          f"at iteration {report['best_iteration']}: {report['best_params']}")
    print(f"   Reused steps per iteration: {report['reused_step_counts']}")
    return record.run_id


def run_ensemble(gateway: CimfGateway, workflow_type: str, labels, seed: int,
                 calibration_run: Optional[str]) -> None:
    print(f"Running {workflow_type} over {len(labels)} members...")
    options: Dict[str, Any] = {"precip_members": members(labels, seed), "threshold": 0.05}
    if calibration_run:
        options["calibration_run"] = calibration_run
    record = run(gateway, base_payload(workflow_type, **options))
    summary = json.loads(gateway.results(record.run_id, "metric_summary.json")[0])
    print(f"   {summary['metric']} over {summary['member_count']}/{summary['ensemble_size']} members")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Synthetic flood experiments")
    parser.add_argument("mode", choices=["calibrate", "climatology", "forecast", "all"])
    parser.add_argument("--store-root", help="Keep results in this store instead of a temp dir")
    parser.add_argument("--iterations", type=int, default=20)
    parser.add_argument("--sampler", default="latin_hypercube", choices=["uniform", "latin_hypercube"])
    parser.add_argument("--batch-width", type=int, default=4)
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    with tempfile.TemporaryDirectory(prefix="cimf_experiments_") as scratch:
        store_root = Path(args.store_root) if args.store_root else Path(scratch) / "store"
        gateway = CimfGateway(CimfOptions.builder().store_root(store_root).build())
        try:
            gateway.bootstrap()
            calibration_run = None
            if args.mode in ("calibrate", "all"):
                calibration_run = run_calibration(gateway, args.iterations, args.sampler, args.batch_width)
                if calibration_run is None:
                    return 1
            if args.mode in ("climatology", "all"):
                run_ensemble(gateway, "flood-climatology", CLIMATOLOGY_YEARS, 2001, calibration_run)
            if args.mode in ("forecast", "all"):
                run_ensemble(gateway, "flood-forecast", FORECAST_MEMBERS, 10, calibration_run)
        finally:
            gateway.shutdown(wait=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
