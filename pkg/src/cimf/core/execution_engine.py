"""
Workflow execution engine.

`WorkflowExecutor.execute` drives one DAG: the calling thread owns all run
state and hands ready steps to the shared step pool, where `run_step`
performs the sandbox contract. Failed steps mark their dependents skipped
while independent branches carry on. A fan-in step runs over the members
that produced their outputs.

Step outputs land in the run bucket as ``<step_id>/<output>``; the captured
stdout and stderr of every invocation as ``logs/<step_id>.log``.
"""

import logging
import threading
from concurrent.futures import FIRST_COMPLETED, Future, wait
from typing import Any, Dict, List, Optional, Set, Tuple

from ..sdk.config import CimfConfig
from ..sdk.execution import RunRecord, RunStatus, StepResult, StepSignature, StepStatus
from ..sdk.local_sandbox import LocalSandbox
from ..utils.helpers import canonical_json, utc_now
from .errors import CimfError, NotFoundError
from .module_registry import EXECUTABLE_TOKEN, PARAM_TOKEN, ModuleRegistry
from .object_store import ObjectStore, StoredObject
from .pwc import PreviousWorkflowCatalogue
from .resource_manager import ResourceManager
from .template_catalog import ConcreteStep, DagInstance, InputBinding

logger = logging.getLogger(__name__)


def format_param(value: Any) -> str:
    """String form of a param value on a command line."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return value
    return canonical_json(value).decode("utf-8")


def build_argv(run_command: Tuple[str, ...], executable: str, params: Dict[str, Any]) -> List[str]:
    """
    Substitute ``{executable}`` and ``{param:NAME}`` in a run command.

    The executable path is prepended when the command does not mention it.
    """
    argv = []
    for token in run_command:
        token = token.replace(EXECUTABLE_TOKEN, executable)
        token = PARAM_TOKEN.sub(lambda m: format_param(params.get(m.group(1), "")), token)
        argv.append(token)
    if not any(EXECUTABLE_TOKEN in token for token in run_command):
        argv.insert(0, executable)
    return argv


def input_selector(binding: InputBinding) -> str:
    if binding.stored_name is not None:
        return binding.stored_name
    return f"{binding.from_step}/{binding.output}"


class WorkflowExecutor:
    """Executes DAG instances against one store, registry and catalogue."""

    def __init__(self, store: ObjectStore, registry: ModuleRegistry, pwc: PreviousWorkflowCatalogue,
                 config: CimfConfig, resources: Optional[ResourceManager] = None):
        self.store = store
        self.registry = registry
        self.pwc = pwc
        self.config = config
        self.resources = resources or ResourceManager(config.workers, config.max_active_runs)
        self.invocations = 0
        self._counter_lock = threading.Lock()

    # -- signatures --------------------------------------------------------

    def step_signature(self, step: ConcreteStep, bucket: str) -> StepSignature:
        """
        Memoization key of a concrete step in a bucket.

        Raises:
            NotFoundError: If an input cannot be resolved to a stored object
        """
        spec = self.registry.get_spec(*step.module)
        digests = []
        for name, binding in step.inputs.items():
            obj = self.store.head(bucket, input_selector(binding))
            digests.append((name, obj.digest))
        return StepSignature(
            module_name=spec.name,
            module_tag=spec.tag,
            executable_digest=spec.executable_digest,
            resolved_params=dict(step.params),
            input_digests=tuple(sorted(digests)),
        )

    # -- one step ----------------------------------------------------------

    def run_step(self, step: ConcreteStep, bucket: str, run_id: str = "", reuse: bool = False) -> StepResult:
        """
        Execute one step under the sandbox contract, or import a previous result.

        Never raises for step-level failures; they are reported on the result.
        """
        result = StepResult(
            step_id=step.step_id,
            module=f"{step.module[0]}:{step.module[1]}",
            status=StepStatus.RUNNING,
            started_at=utc_now(),
            member=step.member,
        )
        try:
            result.signature = self.step_signature(step, bucket)
        except CimfError as e:
            return self._fail(result, f"unresolved input: {e.message}")

        if reuse:
            reused = self._try_reuse(step, bucket, result)
            if reused is not None:
                return reused

        try:
            resolved = self.registry.resolve(*step.module)
        except CimfError as e:
            return self._fail(result, e.message)
        spec = resolved.spec
        timeout = float(step.resources.get("timeout", self.config.step_timeout))

        sandbox = LocalSandbox(step.step_id, root=self.config.sandbox_root, keep=self.config.keep_sandbox)
        try:
            with sandbox:
                for name, binding in sorted(step.inputs.items()):
                    data, _ = self.store.get(bucket, input_selector(binding))
                    sandbox.stage_input(name, data)
                sandbox.write_params(step.params)
                argv = build_argv(spec.run_command, str(resolved.executable_path), step.params)
                logger.info(f"[{run_id}] Running {step.step_id} ({spec.ref})")
                execution = sandbox.run(argv, timeout=timeout)
                with self._counter_lock:
                    self.invocations += 1
                result.exit_code = execution.exit_code
                result.log_ref = self.store.put(bucket, f"logs/{step.step_id}.log",
                                               execution.log_text().encode("utf-8"))

                if execution.has_error():
                    return self._fail(
                        result, "timeout" if execution.timeout else f"module exited with code {execution.exit_code}"
                    )

                collected: List[Tuple[str, bytes]] = []
                for output in spec.outputs:
                    data = sandbox.collect(output.logical_name)
                    if data is None:
                        if output.required:
                            return self._fail(
                                result, f"contract violation: declared output {output.logical_name!r} missing"
                            )
                        continue
                    collected.append((output.logical_name, data))
                result.outputs = [self.store.put(bucket, f"{step.step_id}/{name}", data) for name, data in collected]
        except CimfError as e:
            return self._fail(result, f"staging failed: {e.message}")
        except OSError as e:
            return self._fail(result, f"staging failed: {e}")

        result.status = StepStatus.SUCCEEDED
        result.ended_at = utc_now()
        logger.info(f"[{run_id}] {step.step_id} succeeded ({len(result.outputs)} outputs)")
        return result

    def _try_reuse(self, step: ConcreteStep, bucket: str, result: StepResult) -> Optional[StepResult]:
        hit = self.pwc.find_reusable(result.signature)
        if hit is None:
            return None
        source_run, source = hit
        prefix = f"{source.step_id}/"
        try:
            outputs = []
            for obj in source.outputs:
                relative = obj.logical_name[len(prefix):] if obj.logical_name.startswith(prefix) else obj.logical_name
                outputs.append(self.store.copy_from(obj.bucket, obj.stored_name, bucket,
                                                    logical_name=f"{step.step_id}/{relative}"))
        except CimfError as e:
            logger.warning(f"Could not import outputs of {source_run}/{source.step_id}: {e.message}")
            return None
        result.outputs = outputs
        result.status = StepStatus.REUSED
        result.exit_code = source.exit_code
        result.reused_from = {"run_id": source_run, "step_id": source.step_id}
        result.ended_at = utc_now()
        logger.info(f"Reused {step.step_id} from {source_run}/{source.step_id}")
        return result

    @staticmethod
    def _fail(result: StepResult, error: str) -> StepResult:
        result.status = StepStatus.FAILED
        result.error = error
        result.ended_at = utc_now()
        logger.warning(f"Step {result.step_id} failed: {error}")
        return result

    # -- whole DAG ---------------------------------------------------------

    def open_run(self, dag: DagInstance, user_payload: Optional[Dict[str, Any]] = None, workflow_type: str = "",
                 parent_run: Optional[str] = None, idempotency_key: Optional[str] = None) -> RunRecord:
        """Create the catalogue record of a run before it executes."""
        run = RunRecord(
            run_id=dag.run_id,
            workflow_name=dag.workflow_name,
            template_version_hash=dag.template_version_hash,
            flavour=dag.flavour,
            bucket=dag.bucket,
            user_payload=user_payload or {},
            engine_payload=dag.engine_payload,
            workflow_type=workflow_type or dag.engine_payload.get("workflow_type", ""),
            steps=[self._pending(node) for node in dag.nodes],
            edges=list(dag.edges),
            submitted_at=utc_now(),
            parent_run=parent_run,
            idempotency_key=idempotency_key,
        )
        self.pwc.record(run)
        return run

    @staticmethod
    def _pending(node: ConcreteStep) -> StepResult:
        return StepResult(step_id=node.step_id, module=f"{node.module[0]}:{node.module[1]}", member=node.member)

    def execute(self, dag: DagInstance, reuse: bool = True, run: Optional[RunRecord] = None) -> RunRecord:
        """
        Run every step of the DAG in dependency order.

        Args:
            dag: The instantiated workflow
            reuse: Consult the catalogue for reusable steps first
            run: The record opened for this run; one is opened when omitted

        Returns:
            The finalized run record
        """
        if run is None:
            run = self.open_run(dag)
        if len(run.steps) != len(dag.nodes):
            run.steps = [self._pending(node) for node in dag.nodes]
        run.status = RunStatus.RUNNING
        self.pwc.update(run)
        logger.info(f"Executing run {run.run_id}: {len(dag.nodes)} steps, reuse={reuse}")

        nodes = {node.step_id: node for node in dag.nodes}
        position = {node.step_id: i for i, node in enumerate(dag.nodes)}
        preds: Dict[str, Set[str]] = {step_id: set() for step_id in nodes}
        for a, b in dag.edges:
            preds[b].add(a)

        def status(step_id: str) -> StepStatus:
            return run.steps[position[step_id]].status

        def store_result(result: StepResult) -> None:
            run.steps[position[result.step_id]] = result
            self.pwc.update(run)

        in_flight: Dict[Future, str] = {}
        while True:
            for node in dag.nodes:
                if status(node.step_id) != StepStatus.PENDING:
                    continue
                decision, detail = self._readiness(node, preds[node.step_id], nodes, status)
                if decision == "wait":
                    continue
                if decision == "skip":
                    skipped = self._pending(node)
                    skipped.status = StepStatus.SKIPPED
                    skipped.error = detail
                    store_result(skipped)
                    continue
                step = self._drop_failed_members(node, preds[node.step_id], nodes, status)
                running = self._pending(node)
                running.status = StepStatus.RUNNING
                running.started_at = utc_now()
                store_result(running)
                future = self.resources.step_pool.submit(self.run_step, step, dag.bucket, run.run_id, reuse)
                in_flight[future] = node.step_id

            if not in_flight:
                break
            done, _ = wait(list(in_flight), return_when=FIRST_COMPLETED)
            for future in done:
                step_id = in_flight.pop(future)
                try:
                    result = future.result()
                except Exception as e:
                    logger.exception(f"Unexpected error running {step_id}")
                    result = self._fail(self._pending(nodes[step_id]), f"engine error: {e}")
                store_result(result)

        failed = [s for s in run.steps if not s.status.ok]
        run.status = RunStatus.FAILED if failed else RunStatus.SUCCEEDED
        if failed:
            first = failed[0]
            run.error = f"{len(failed)} steps did not succeed; first: {first.step_id} ({first.error or first.status.value})"
        run.ended_at = utc_now()
        self.pwc.finalize(run)
        counts = run.step_counts()
        logger.info(
            f"Run {run.run_id} {run.status.value}: {counts['succeeded']} executed, "
            f"{counts['reused']} reused, {counts['failed']} failed, {counts['skipped']} skipped"
        )
        return run

    @staticmethod
    def _readiness(node: ConcreteStep, preds: Set[str], nodes: Dict[str, ConcreteStep], status) -> Tuple[str, str]:
        if node.fan_in:
            members = [p for p in preds if nodes[p].member is not None]
            shared = [p for p in preds if nodes[p].member is None]
        else:
            members, shared = [], list(preds)
        for p in sorted(shared):
            state = status(p)
            if state.terminal and not state.ok:
                return "skip", f"upstream {p} {state.value}"
        if any(not status(p).ok for p in shared):
            return "wait", ""
        if any(not status(p).terminal for p in members):
            return "wait", ""
        if members and not any(status(p).ok for p in members):
            return "skip", "no ensemble member succeeded"
        return "run", ""

    @staticmethod
    def _drop_failed_members(node: ConcreteStep, preds: Set[str], nodes: Dict[str, ConcreteStep],
                             status) -> ConcreteStep:
        if not node.fan_in:
            return node
        failed = {nodes[p].member for p in preds if nodes[p].member is not None and not status(p).ok}
        if not failed:
            return node
        logger.warning(f"Fan-in {node.step_id} proceeds without members {sorted(failed)}")
        inputs = {name: b for name, b in node.inputs.items() if b.member not in failed}
        return ConcreteStep(
            step_id=node.step_id,
            template_step=node.template_step,
            module=node.module,
            params=node.params,
            inputs=inputs,
            resources=node.resources,
            member=node.member,
            fan_in=True,
        )

    def output_of(self, run: RunRecord, step_id: str, output: str) -> StoredObject:
        """Stored object of a step output in a finished run."""
        obj = run.step(step_id).output(output)
        if obj is None:
            raise NotFoundError(f"Run {run.run_id} has no output {output!r} of step {step_id!r}")
        return obj
