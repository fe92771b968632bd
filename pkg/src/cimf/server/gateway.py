"""
Gateway service: the operations behind the REST API, the MCP tools and the CLI.

`CimfGateway` wires one object store, module registry, template catalogue,
previous workflow catalogue and executor together. Submissions are validated,
translated, instantiated and recorded synchronously; execution is handed to
the resource manager's run pool so `submit` returns as soon as the run is
catalogued.
"""

import json
import logging
import threading
import time
import uuid
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FuturesTimeout
from datetime import datetime, timezone
from pathlib import PurePosixPath
from typing import Any, Dict, List, Optional, Tuple, Union

from ..core.calibration_service import PARAMS_NAME, REPORT_NAME, CalibrationService, validate_calibration_payload
from ..core.errors import ConflictError, DuplicateError, NotFoundError, ValidationError
from ..core.execution_engine import WorkflowExecutor
from ..core.module_registry import ModuleRegistry, spec_from_json
from ..core.object_store import ObjectStore, StoredObject
from ..core.pwc import DEFAULT_PAGE_SIZE, PreviousWorkflowCatalogue
from ..core.resource_manager import ResourceManager
from ..core.security import SecurityManager
from ..core.template_catalog import DagInstance, TemplateCatalog, UserPayload
from ..sdk.config import CimfConfig
from ..sdk.execution import RunRecord, RunStatus
from ..utils.helpers import canonical_json

logger = logging.getLogger(__name__)

POLL_INTERVAL = 0.05  # seconds


def new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return f"run-{stamp}-{uuid.uuid4().hex[:8]}"


def without_key(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Payload without its idempotency key; the key may arrive as a header or a field."""
    return {name: value for name, value in payload.items() if name != "idempotency_key"}


class CimfGateway:
    """Front door of a CIMF deployment."""

    def __init__(self, config: Optional[CimfConfig] = None, resources: Optional[ResourceManager] = None):
        self.config = config or CimfConfig.from_env()
        self.store = ObjectStore(self.config.store_root)
        self.registry = ModuleRegistry(self.store)
        self.catalog = TemplateCatalog(self.store, self.registry, inline_threshold=self.config.inline_threshold)
        self.pwc = PreviousWorkflowCatalogue(self.config.store_root, self.store)
        self.resources = resources or ResourceManager(self.config.workers, self.config.max_active_runs)
        self.executor = WorkflowExecutor(self.store, self.registry, self.pwc, self.config, self.resources)
        self.calibration = CalibrationService(self.store, self.catalog, self.executor)
        self.security = SecurityManager(self.config.token)
        self._futures: Dict[str, Future] = {}
        self._submit_lock = threading.Lock()
        logger.info(f"Gateway ready on store {self.config.store_root}")

    # -- submission --------------------------------------------------------

    def effective_payload(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """
        Payload with the calibrated parameters of `options.calibration_run` merged in.

        Explicit options win over calibrated values.
        """
        options = payload.get("options") or {}
        source = options.get("calibration_run") if isinstance(options, dict) else None
        if not source:
            return payload
        if not isinstance(source, str):
            raise ValidationError("calibration_run must be a run id", field="options.calibration_run")
        try:
            run = self.pwc.get(source)
            data, _ = self.store.get(run.bucket, PARAMS_NAME)
        except NotFoundError:
            raise ValidationError(f"Run {source!r} has no calibrated parameters",
                                  field="options.calibration_run")
        calibrated = json.loads(data)["params"]
        merged = dict(payload)
        merged["options"] = {**calibrated, **options}
        logger.info(f"Applying calibrated parameters of {source}: {sorted(calibrated)}")
        return merged

    def submit(self, payload: Dict[str, Any], idempotency_key: Optional[str] = None) -> Dict[str, Any]:
        """
        Validate, translate, instantiate and schedule a workflow run.

        Args:
            payload: User payload document
            idempotency_key: Overrides the payload's own key (HTTP header)

        Returns:
            {"run_id", "status", "deduplicated"}

        Raises:
            ValidationError: Payload errors, naming the field path
            NotFoundError: Unknown workflow_type
            DuplicateError: Idempotency key reused with a different payload
            SaturatedError: Too many active runs
        """
        parsed = UserPayload.from_dict(payload)
        key = idempotency_key or parsed.idempotency_key
        with self._submit_lock:
            if key:
                existing = self.pwc.find_by_idempotency_key(key)
                if existing is not None:
                    if canonical_json(without_key(existing.user_payload)) != canonical_json(without_key(payload)):
                        raise DuplicateError(f"Idempotency key {key!r} was used with a different payload",
                                             field="idempotency_key")
                    logger.info(f"Idempotent resubmission of {existing.run_id}")
                    return {"run_id": existing.run_id, "status": existing.status.value, "deduplicated": True}

            workflow_name, flavour = self.catalog.resolve_workflow_type(parsed.workflow_type)
            effective = self.effective_payload(payload)
            if flavour == "calibration":
                template = self.catalog.get(workflow_name)
                validate_calibration_payload(template, UserPayload.from_dict(effective))

            run_id = new_run_id()
            self.resources.acquire_run(run_id)
            try:
                self.store.create_bucket(run_id)
                dag = self.catalog.instantiate(workflow_name, effective, bucket=run_id, run_id=run_id,
                                               flavour=flavour)
                run = self.executor.open_run(dag, user_payload=payload, workflow_type=parsed.workflow_type,
                                             idempotency_key=key)
            except Exception:
                self.resources.release_run(run_id)
                raise
            self._futures[run_id] = self.resources.start_run(
                run_id, lambda: self._drive(dag, run, reuse=parsed.reuse)
            )
        logger.info(f"Accepted {parsed.workflow_type} run {run_id} ({len(dag.nodes)} steps)")
        return {"run_id": run_id, "status": run.status.value, "deduplicated": False}

    def _drive(self, dag: DagInstance, run: RunRecord, reuse: bool) -> RunRecord:
        try:
            if dag.iterative:
                return self.calibration.execute(dag, run)
            return self.executor.execute(dag, reuse=reuse, run=run)
        finally:
            # submit registers the future while holding the lock
            with self._submit_lock:
                self._futures.pop(run.run_id, None)

    def wait_for(self, run_id: str, timeout: Optional[float] = None) -> RunRecord:
        """
        Block until a run is final.

        Raises:
            NotFoundError: Unknown run
            TimeoutError: If the run is still going after `timeout` seconds
        """
        future = self._futures.get(run_id)
        if future is not None:
            try:
                future.result(timeout=timeout)
            except FuturesTimeout:
                raise TimeoutError(f"Run {run_id} still running after {timeout}s")
            except Exception as e:
                logger.error(f"Run {run_id} driver raised: {e}")
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self.pwc.is_final(run_id):
            if not self.pwc.exists(run_id):
                raise NotFoundError(f"Unknown run {run_id}")
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError(f"Run {run_id} still running after {timeout}s")
            time.sleep(POLL_INTERVAL)
        return self.pwc.get(run_id)

    # -- status and results ------------------------------------------------

    def status(self, run_id: str) -> Dict[str, Any]:
        """Run summary as seen by the catalogue right now."""
        return self.pwc.get(run_id).summary()

    def run_record(self, run_id: str) -> Dict[str, Any]:
        return self.pwc.get(run_id).to_dict()

    def _pending_outputs(self, run: RunRecord) -> List[str]:
        names = []
        for step in run.steps:
            if step.status.terminal:
                continue
            name, _, tag = step.module.rpartition(":")
            try:
                spec = self.registry.get_spec(name, tag)
            except NotFoundError:
                continue
            names.extend(f"{step.step_id}/{o.logical_name}" for o in spec.outputs)
            names.append(f"logs/{step.step_id}.log")
        if run.flavour == "calibration" and not run.status.terminal:
            names.extend([REPORT_NAME, PARAMS_NAME])
        return names

    def resolve_object(self, run_id: str, selector: str) -> StoredObject:
        """
        Find an object of a run by stored_name, logical name or unique basename.

        Raises:
            NotFoundError: Unknown run or object
            ConflictError: The object will be produced by a step that has not finished
            ValidationError: An ambiguous basename
        """
        run = self.pwc.get(run_id)
        try:
            return self.store.head(run.bucket, selector)
        except NotFoundError:
            pass
        matches = [o for o in self.store.list(run.bucket)
                   if PurePosixPath(o.logical_name).name == selector]
        latest: Dict[str, StoredObject] = {}
        for obj in sorted(matches, key=lambda o: o.created_at):
            latest[obj.logical_name] = obj
        if len(latest) == 1:
            return next(iter(latest.values()))
        if len(latest) > 1:
            raise ValidationError(f"{selector!r} is ambiguous in run {run_id}: {sorted(latest)}", field="object")
        pending = self._pending_outputs(run)
        if any(p == selector or PurePosixPath(p).name == selector for p in pending):
            raise ConflictError(f"Object {selector!r} of run {run_id} is still being produced")
        raise NotFoundError(f"Run {run_id} has no object {selector!r}")

    def results(self, run_id: str, selector: str) -> Tuple[bytes, StoredObject]:
        """Object content of a run, integrity checked."""
        obj = self.resolve_object(run_id, selector)
        return self.store.get(obj.bucket, obj.stored_name)

    def list_objects(self, run_id: str) -> List[Dict[str, Any]]:
        run = self.pwc.get(run_id)
        return [o.to_dict() for o in self.store.list(run.bucket)]

    def list_runs(self, workflow_name: Optional[str] = None, status: Optional[str] = None,
                  since: Optional[str] = None, until: Optional[str] = None,
                  limit: int = DEFAULT_PAGE_SIZE, offset: int = 0) -> List[Dict[str, Any]]:
        return self.pwc.query_runs(workflow_name=workflow_name, status=status, since=since, until=until,
                                   limit=limit, offset=offset)

    # -- administration ----------------------------------------------------

    def authenticate(self, authorization: Optional[str]) -> None:
        self.security.authenticate(authorization)

    def onboard(self, spec: Union[str, bytes, Dict[str, Any]], executable: bytes) -> Dict[str, str]:
        """On-board a module from its spec document and executable bytes."""
        if isinstance(spec, dict):
            spec = json.dumps(spec)
        name, tag = self.registry.onboard_module(spec_from_json(spec), executable)
        return {"name": name, "tag": tag}

    def list_modules(self, name_filter: Optional[str] = None) -> List[Dict[str, str]]:
        return [{"name": n, "tag": t, "description": d} for n, t, d in self.registry.list_modules(name_filter)]

    def register_template(self, document: Union[str, bytes, Dict[str, Any]]) -> Dict[str, str]:
        workflow_name, version_hash = self.catalog.register_template(document)
        return {"workflow_name": workflow_name, "version_hash": version_hash}

    def show_template(self, workflow_name: str, version: Optional[str] = None) -> Dict[str, Any]:
        return self.catalog.show(workflow_name, version)

    def list_templates(self) -> List[Dict[str, Any]]:
        return self.catalog.list_templates()

    def bootstrap(self) -> Dict[str, Any]:
        """On-board the bundled modules and register the flood template."""
        from ..modules.bundled import bootstrap
        return bootstrap(self.registry, self.catalog)

    # -- provenance --------------------------------------------------------

    def recorded_payload(self, run: RunRecord) -> Dict[str, Any]:
        """
        The effective payload of a run with every input option pinned to the
        object the run consumed, so local files edited since cannot leak in.
        """
        payload = json.loads(json.dumps(self.effective_payload(run.user_payload)))
        options = payload.setdefault("options", {})
        for name, stored_name in run.engine_payload.get("objects", {}).items():
            options[name] = {"ref": {"bucket": run.bucket, "stored_name": stored_name}}
        for name, entries in run.engine_payload.get("members", {}).items():
            options[name] = [
                {"label": entry["label"], "ref": {"bucket": run.bucket, "stored_name": entry["stored_name"]}}
                for entry in entries
            ]
        return payload

    def replay_dag(self, run_id: str) -> DagInstance:
        """
        Re-instantiate a run's template version with its recorded inputs.

        The result has the same node set, edges and input objects as the
        original run. Every object translation produces is already in the
        run's bucket, so the bucket is left unchanged.
        """
        run = self.pwc.get(run_id)
        return self.catalog.instantiate(
            run.workflow_name,
            self.recorded_payload(run),
            bucket=run.bucket,
            run_id=run.run_id,
            flavour=run.flavour,
            version=run.template_version_hash,
        )

    def health(self) -> Dict[str, Any]:
        stats = self.resources.get_resource_stats(str(self.config.store_root))
        return {
            "status": "ok",
            "auth": self.security.auth_enabled,
            "modules": len(self.registry.list_modules()),
            "templates": len(self.catalog.list_templates()),
            "security": self.security.auditor.get_security_summary(),
            "resources": stats,
        }

    def shutdown(self, wait: bool = True) -> None:
        self.resources.shutdown(wait=wait)
