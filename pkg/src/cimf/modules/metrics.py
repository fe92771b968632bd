"""
Ensemble fan-in: reduce member outputs to one risk raster.

``stack_manifest.json`` lists the member labels. Every member that
delivered ``member_<label>.asc`` (and ``series_<label>.json`` for day
counts) takes part; the others are reported as missing. Outputs
``metric.asc`` and ``metric_summary.json``.
"""

import json
import logging
import sys
from typing import Any, Dict, List

from ..science.raster import Raster, read_ascii, series_from_json
from ..science.risk_metrics import DEFAULT_THRESHOLD, MetricSpec, ensemble_metric
from ._wrapper import UsageError, run_module, sandbox_file, write_json

logger = logging.getLogger("cimf-metrics")

MANIFEST = "stack_manifest.json"


def _run(params: Dict[str, Any]) -> None:
    try:
        spec = MetricSpec(
            metric=params.get("metric") or "exceedance_probability",
            threshold=float(params.get("threshold", DEFAULT_THRESHOLD)),
            per_member_reduction=params.get("per_member_reduction") or None,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e

    manifest = json.loads(sandbox_file(MANIFEST).read_text(encoding="utf-8"))
    labels: List[str] = list(manifest.get("labels", []))
    members: Dict[str, List[Raster]] = {}
    missing: List[str] = []
    for label in labels:
        if spec.needs_series:
            path = sandbox_file(f"series_{label}.json")
            if path.is_file():
                members[label] = series_from_json(path.read_bytes())
                continue
        else:
            path = sandbox_file(f"member_{label}.asc")
            if path.is_file():
                members[label] = [read_ascii(path)]
                continue
        missing.append(label)
    if not members:
        raise ValueError("No ensemble member outputs are present")
    if missing:
        logger.warning(f"Computing {spec.metric} without members {missing}")

    metric = ensemble_metric(members, spec)
    sandbox_file("metric.asc").write_bytes(metric.to_bytes())
    write_json("metric_summary.json", {
        "metric": spec.metric,
        "threshold": spec.threshold,
        "per_member_reduction": spec.reduction,
        "members_used": sorted(members),
        "members_missing": missing,
        "member_count": len(members),
        "ensemble_size": len(labels),
    })
    logger.info(f"{spec.metric} over {len(members)}/{len(labels)} members")


def main() -> int:
    return run_module("cimf-metrics", _run)


if __name__ == "__main__":
    sys.exit(main())
