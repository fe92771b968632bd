"""
Iterative calibration of model parameters against an observed flood extent.

A calibration run is a parent record plus one child run per iteration.
Child ``<run_id>-it000`` is the baseline with template defaults for every
searched option; children ``-it001`` onwards use sampled values. Children
run the calibration structure (single flavour plus the IoU objective) with
reuse enabled, so unchanged upstream steps execute once across the whole
calibration. The report and the best parameters are stored in the parent
bucket as ``calibration_report.json`` and ``calibrated_params.json``.
"""

import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..sdk.execution import RunRecord, RunStatus, StepStatus
from ..science.raster import RasterError, read_ascii
from ..utils.helpers import utc_now
from .errors import CalibrationError, CimfError, ValidationError
from .execution_engine import WorkflowExecutor
from .object_store import ObjectStore
from .template_catalog import DagInstance, TemplateCatalog, UserPayload, WorkflowTemplate

logger = logging.getLogger(__name__)

REPORT_NAME = "calibration_report.json"
PARAMS_NAME = "calibrated_params.json"
CALIBRATION_OPTIONS = ("iterations", "seed", "search_params", "sampler", "batch_width", "calibration_run")
DEFAULT_ITERATIONS = 100


class Sampler(ABC):
    """Draws parameter sets inside per-option bounds."""

    def __init__(self, bounds: Dict[str, Tuple[float, float]], seed: int = 0,
                 integers: Tuple[str, ...] = ()):
        self.bounds = {name: bounds[name] for name in sorted(bounds)}
        self.seed = seed
        self.integers = set(integers)
        self.rng = np.random.Generator(np.random.PCG64(seed))

    @abstractmethod
    def unit_samples(self, n: int) -> np.ndarray:
        """(n, d) array of points in the unit hypercube."""

    def sample(self, n: int) -> List[Dict[str, Any]]:
        unit = self.unit_samples(n)
        samples = []
        for row in unit:
            point = {}
            for (name, (lower, upper)), u in zip(self.bounds.items(), row):
                if name in self.integers:
                    # equal-width bins over [lower, upper + 1)
                    point[name] = min(int(np.floor(lower + float(u) * (upper - lower + 1))), int(upper))
                else:
                    point[name] = lower + float(u) * (upper - lower)
            samples.append(point)
        return samples


class UniformSampler(Sampler):
    """Independent uniform draws per option."""

    def unit_samples(self, n: int) -> np.ndarray:
        return self.rng.random((n, len(self.bounds)))


class LatinHypercubeSampler(Sampler):
    """One draw per stratum of each option, strata shuffled independently."""

    def unit_samples(self, n: int) -> np.ndarray:
        d = len(self.bounds)
        unit = np.empty((n, d))
        for j in range(d):
            strata = self.rng.permutation(n)
            unit[:, j] = (strata + self.rng.random(n)) / n
        return unit


SAMPLERS = {"uniform": UniformSampler, "latin_hypercube": LatinHypercubeSampler}


@dataclass
class CalibrationConfig:
    workflow_name: str
    version: Optional[str]
    fixed_payload: Dict[str, Any]
    search_params: Dict[str, Tuple[float, float]]
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    sampler: str = "uniform"
    batch_width: int = 1

    @classmethod
    def from_payload(cls, template: WorkflowTemplate, payload: Dict[str, Any]) -> 'CalibrationConfig':
        """
        Read calibration settings from the payload options.

        Raises:
            ValidationError: On missing or inconsistent settings
        """
        options = payload.get("options", {})
        raw_bounds = options.get("search_params")
        if not isinstance(raw_bounds, dict) or not raw_bounds:
            raise ValidationError("Calibration needs search_params {option: [lower, upper]}",
                                  field="options.search_params")
        bounds = {}
        for name, pair in raw_bounds.items():
            path = f"options.search_params.{name}"
            if name not in template.hooks.calibratable:
                raise ValidationError(f"Option {name!r} is not calibratable", field=path)
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ValidationError("Bounds must be [lower, upper]", field=path)
            decl = template.options[name]
            lower = decl.check_scalar(pair[0], path)
            upper = decl.check_scalar(pair[1], path)
            if lower > upper:
                raise ValidationError(f"Lower bound {lower} exceeds upper bound {upper}", field=path)
            bounds[name] = (float(lower), float(upper))

        def option(name: str, default: Any) -> Any:
            value = options.get(name)
            if value is None and name in template.options:
                value = template.options[name].default
            return default if value is None else value

        config = cls(
            workflow_name=template.workflow_name,
            version=template.version_hash,
            fixed_payload=payload,
            search_params=bounds,
            iterations=int(option("iterations", DEFAULT_ITERATIONS)),
            seed=int(option("seed", 0)),
            sampler=str(option("sampler", "uniform")),
            batch_width=int(option("batch_width", 1)),
        )
        if config.iterations < 1:
            raise ValidationError("iterations must be >= 1", field="options.iterations")
        if config.sampler not in SAMPLERS:
            raise ValidationError(f"sampler must be one of {sorted(SAMPLERS)}", field="options.sampler")
        if config.batch_width < 1:
            raise ValidationError("batch_width must be >= 1", field="options.batch_width")
        return config

    def make_sampler(self, template: WorkflowTemplate) -> Sampler:
        integers = tuple(n for n in self.search_params if template.options[n].type == "integer")
        return SAMPLERS[self.sampler](self.search_params, seed=self.seed, integers=integers)


@dataclass
class IterationResult:
    index: int
    params: Dict[str, Any]
    run_id: str
    iou: Optional[float] = None
    empty_union: bool = False
    status: str = "pending"
    error: Optional[str] = None
    executed_steps: int = 0
    reused_steps: int = 0
    scores: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "params": self.params,
            "run_id": self.run_id,
            "iou": self.iou,
            "empty_union": self.empty_union,
            "status": self.status,
            "error": self.error,
            "executed_steps": self.executed_steps,
            "reused_steps": self.reused_steps,
            "scores": self.scores,
        }


@dataclass
class CalibrationReport:
    run_id: str
    iterations: List[IterationResult]
    search_params: Dict[str, Tuple[float, float]]
    seed: int
    sampler: str
    best_iteration: Optional[int] = None
    best_params: Dict[str, Any] = field(default_factory=dict)
    best_iou: Optional[float] = None
    initial_iou: Optional[float] = None
    best_so_far: List[Optional[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "search_params": {k: list(v) for k, v in self.search_params.items()},
            "seed": self.seed,
            "sampler": self.sampler,
            "initial_iou": self.initial_iou,
            "best_iou": self.best_iou,
            "best_iteration": self.best_iteration,
            "best_params": self.best_params,
            "best_so_far": self.best_so_far,
            "iterations": [it.to_dict() for it in self.iterations],
            "reused_step_counts": [it.reused_steps for it in self.iterations],
        }


def summarize(iterations: List[IterationResult]) -> Tuple[Optional[int], List[Optional[float]]]:
    """
    Best iteration (earliest on ties) and the best-so-far sequence, by index order.
    """
    best_index = None
    best_value = None
    trace: List[Optional[float]] = []
    for it in sorted(iterations, key=lambda i: i.index):
        if it.iou is not None and (best_value is None or it.iou > best_value):
            best_value = it.iou
            best_index = it.index
        trace.append(best_value)
    return best_index, trace


class CalibrationService:
    """Drives calibration runs through the template catalogue and the engine."""

    def __init__(self, store: ObjectStore, catalog: TemplateCatalog, executor: WorkflowExecutor):
        self.store = store
        self.catalog = catalog
        self.executor = executor
        self.pwc = executor.pwc

    def child_payload(self, parent: RunRecord, params: Optional[Dict[str, Any]],
                      searched: List[str]) -> Dict[str, Any]:
        """Payload of one iteration: parent inputs by reference, searched options set or defaulted."""
        payload = json.loads(json.dumps(parent.user_payload))
        payload.pop("idempotency_key", None)
        options = payload.setdefault("options", {})
        for name in CALIBRATION_OPTIONS:
            options.pop(name, None)
        for name, stored_name in parent.engine_payload.get("objects", {}).items():
            options[name] = {"ref": {"bucket": parent.bucket, "stored_name": stored_name}}
        for name in searched:
            options.pop(name, None)
        if params:
            options.update(params)
        return payload

    def run_iteration(self, parent: RunRecord, index: int, params: Optional[Dict[str, Any]],
                      searched: List[str], version: Optional[str]) -> IterationResult:
        run_id = f"{parent.run_id}-it{index:03d}"
        result = IterationResult(index=index, params=dict(params or {}), run_id=run_id)
        try:
            payload = self.child_payload(parent, params, searched)
            self.store.create_bucket(run_id)
            dag = self.catalog.instantiate(parent.workflow_name, payload, bucket=run_id, run_id=run_id,
                                           flavour="calibration", version=version)
            run = self.executor.open_run(dag, user_payload=payload, workflow_type=parent.workflow_type,
                                         parent_run=parent.run_id)
            run = self.executor.execute(dag, reuse=True, run=run)
        except CimfError as e:
            result.status = "failed"
            result.error = e.message
            logger.warning(f"Calibration iteration {index} could not run: {e.message}")
            return result

        counts = run.step_counts()
        result.executed_steps = counts[StepStatus.SUCCEEDED.value] + counts[StepStatus.FAILED.value]
        result.reused_steps = counts[StepStatus.REUSED.value]
        result.status = run.status.value
        if run.status != RunStatus.SUCCEEDED:
            result.error = run.error
            return result
        objective = self.catalog.get(parent.workflow_name, version).hooks.objective_step
        obj = self.executor.output_of(run, objective, "iou.json")
        data, _ = self.store.get(run.bucket, obj.stored_name)
        scores = json.loads(data)
        result.iou = float(scores["iou"])
        result.empty_union = bool(scores.get("empty_union", False))
        result.scores = scores.get("contingency", {})
        return result

    def check_ground_truth(self, parent: RunRecord, baseline: IterationResult) -> None:
        """
        Raises:
            CalibrationError: If the ground truth is unreadable or not on the model grid
        """
        objects = parent.engine_payload.get("objects", {})
        if "ground_truth" not in objects:
            raise CalibrationError("Calibration needs a ground truth extent")
        try:
            truth = read_ascii(self.store.get(parent.bucket, objects["ground_truth"])[0])
        except (RasterError, UnicodeDecodeError, CimfError) as e:
            raise CalibrationError(f"Ground truth is unreadable: {e}")
        if not self.pwc.exists(baseline.run_id):
            return
        run = self.pwc.get(baseline.run_id)
        extent = None
        for step in run.steps:
            extent = step.output("extent.asc") or extent
        if extent is not None:
            predicted = read_ascii(self.store.get(run.bucket, extent.stored_name)[0])
            if not predicted.aligned_with(truth):
                raise CalibrationError(
                    f"Ground truth grid {truth.header.to_dict()} is not aligned with the model grid "
                    f"{predicted.header.to_dict()}"
                )

    def calibrate(self, config: CalibrationConfig, parent: RunRecord) -> CalibrationReport:
        """
        Run the baseline and every sampled iteration, tracking the best IoU.

        Raises:
            CalibrationError: Ground truth unusable, or baseline and every iteration failed
        """
        template = self.catalog.get(config.workflow_name, config.version)
        searched = sorted(config.search_params)
        samples = config.make_sampler(template).sample(config.iterations)
        logger.info(
            f"Calibrating {parent.run_id}: {config.iterations} iterations over {searched} "
            f"({config.sampler}, seed {config.seed}, batch {config.batch_width})"
        )

        baseline = self.run_iteration(parent, 0, None, searched, config.version)
        baseline.params = {name: template.options[name].default for name in searched}
        self.check_ground_truth(parent, baseline)

        if config.batch_width > 1:
            with ThreadPoolExecutor(max_workers=config.batch_width, thread_name_prefix="cimf-calib") as pool:
                futures = [
                    pool.submit(self.run_iteration, parent, i, sample, searched, config.version)
                    for i, sample in enumerate(samples, start=1)
                ]
                results = [f.result() for f in futures]
        else:
            results = [self.run_iteration(parent, i, sample, searched, config.version)
                       for i, sample in enumerate(samples, start=1)]
        iterations = [baseline] + results

        best_index, trace = summarize(iterations)
        if best_index is None:
            raise CalibrationError("The baseline and every calibration iteration failed")
        best = iterations[best_index]
        report = CalibrationReport(
            run_id=parent.run_id,
            iterations=iterations,
            search_params=config.search_params,
            seed=config.seed,
            sampler=config.sampler,
            best_iteration=best_index,
            best_params=dict(best.params),
            best_iou=best.iou,
            initial_iou=baseline.iou,
            best_so_far=trace,
        )
        logger.info(f"Calibration {parent.run_id}: IoU {report.initial_iou} -> {report.best_iou} "
                    f"(iteration {best_index})")
        return report

    def execute(self, dag: DagInstance, parent: RunRecord) -> RunRecord:
        """
        Run a whole calibration for an opened parent record and finalize it.

        The parent's steps mirror the best iteration's steps.
        """
        parent.status = RunStatus.RUNNING
        self.pwc.update(parent)
        try:
            template = self.catalog.get(dag.workflow_name, dag.template_version_hash)
            config = CalibrationConfig.from_payload(template, parent.user_payload)
            report = self.calibrate(config, parent)
            children = [it.run_id for it in report.iterations]
            self.store.put(parent.bucket, REPORT_NAME,
                           (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8"))
            calibrated = {name: template.options[name].default for name in template.hooks.calibratable}
            calibrated.update(report.best_params)
            self.store.put(parent.bucket, PARAMS_NAME, (json.dumps({
                "workflow_name": dag.workflow_name,
                "template_version_hash": dag.template_version_hash,
                "source_run": parent.run_id,
                "best_iou": report.best_iou,
                "params": calibrated,
            }, indent=2, sort_keys=True) + "\n").encode("utf-8"))
            best_run = self.pwc.get(report.iterations[report.best_iteration].run_id)
            parent.steps = best_run.steps
            parent.children = [c for c in children if self.pwc.exists(c)]
            parent.status = RunStatus.SUCCEEDED
        except CimfError as e:
            logger.error(f"Calibration {parent.run_id} failed: {e.message}")
            parent.children = [c for c in self._child_ids(parent) if self.pwc.exists(c)]
            parent.status = RunStatus.FAILED
            parent.error = e.message
            for step in parent.steps:
                if not step.status.terminal:
                    step.status = StepStatus.SKIPPED
                    step.error = "calibration failed"
        parent.ended_at = utc_now()
        self.pwc.finalize(parent)
        return parent

    def _child_ids(self, parent: RunRecord) -> List[str]:
        options = parent.user_payload.get("options", {})
        try:
            count = int(options.get("iterations") or DEFAULT_ITERATIONS)
        except (TypeError, ValueError):
            count = 0
        return [f"{parent.run_id}-it{i:03d}" for i in range(count + 1)]


def validate_calibration_payload(template: WorkflowTemplate, payload: UserPayload) -> None:
    """Early check used by the gateway before a calibration run is accepted."""
    CalibrationConfig.from_payload(template, {"options": payload.options})
