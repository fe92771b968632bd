"""
Previous Workflow Catalogue: durable run provenance and the step reuse index.

The catalogue is a JSON-lines journal at ``<store_root>/_pwc/journal.jsonl``.
Each line is ``{"v": 1, "event": "open" | "final", "run": {...}}``; the last
line of a run wins. A run is opened by `record`, kept in memory while the
engine updates it, and appended again by `finalize`, after which it never
changes. The signature index maps step signature digests to succeeded steps
of finalized runs and is rebuilt from the journal on startup.
"""

import json
import logging
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from ..sdk.execution import RunRecord, RunStatus, StepResult, StepSignature, StepStatus
from ..utils.helpers import parse_timestamp, utc_now
from .errors import DuplicateError, NotFoundError, StorageUnavailableError, ValidationError
from .object_store import ObjectStore

logger = logging.getLogger(__name__)

JOURNAL_VERSION = 1
JOURNAL_DIR = "_pwc"
JOURNAL_FILE = "journal.jsonl"
DEFAULT_PAGE_SIZE = 50


class PreviousWorkflowCatalogue:
    """Run records plus the memoization index used by the engine."""

    def __init__(self, root: Union[str, Path], store: ObjectStore):
        self.store = store
        self.directory = Path(root) / JOURNAL_DIR
        self.path = self.directory / JOURNAL_FILE
        self._lock = threading.RLock()
        self._runs: Dict[str, RunRecord] = {}
        self._final: set = set()
        self._index: Dict[str, List[Tuple[str, str]]] = defaultdict(list)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageUnavailableError(f"Cannot create catalogue directory {self.directory}: {e}") from e
        self._load()

    # -- journal -----------------------------------------------------------

    def _load(self) -> None:
        if not self.path.exists():
            return
        self._terminate_torn_tail()
        lines = 0
        with open(self.path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                    run = RunRecord.from_dict(entry["run"])
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    # a torn final line after a crash
                    logger.warning(f"Skipping unreadable journal line {number}: {e}")
                    continue
                lines += 1
                self._runs[run.run_id] = run
                if entry.get("event") == "final":
                    self._final.add(run.run_id)

        interrupted = [run for run_id, run in self._runs.items() if run_id not in self._final]
        for run in interrupted:
            run.status = RunStatus.FAILED
            run.error = run.error or "interrupted"
            run.ended_at = run.ended_at or utc_now()
            for step in run.steps:
                if not step.status.terminal:
                    step.status = StepStatus.FAILED
                    step.error = step.error or "interrupted"
            self._append("final", run)
            self._final.add(run.run_id)
            lines += 1
        if interrupted:
            logger.warning(f"Marked {len(interrupted)} interrupted runs as failed")

        for run in sorted(self._runs.values(), key=lambda r: (r.ended_at or "", r.run_id)):
            self._index_run(run)
        if lines - len(self._runs) > len(self._runs):
            self.compact()
        logger.info(f"Loaded {len(self._runs)} runs from {self.path}")

    def _terminate_torn_tail(self) -> None:
        # the next append must start on a fresh line
        with open(self.path, "rb+") as handle:
            handle.seek(0, os.SEEK_END)
            if handle.tell() == 0:
                return
            handle.seek(-1, os.SEEK_END)
            if handle.read(1) != b"\n":
                handle.write(b"\n")

    def _append(self, event: str, run: RunRecord) -> None:
        line = json.dumps({"v": JOURNAL_VERSION, "event": event, "run": run.to_dict()},
                          sort_keys=True, separators=(",", ":"))
        try:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
                os.fsync(handle.fileno())
        except OSError as e:
            raise StorageUnavailableError(f"Cannot append to catalogue journal: {e}") from e

    def compact(self) -> int:
        """
        Rewrite the journal with one line per run.

        Returns:
            Number of lines written
        """
        with self._lock:
            tmp = self.path.with_suffix(".jsonl.tmp")
            try:
                with open(tmp, "w", encoding="utf-8") as handle:
                    for run in sorted(self._runs.values(), key=lambda r: (r.submitted_at, r.run_id)):
                        event = "final" if run.run_id in self._final else "open"
                        handle.write(json.dumps({"v": JOURNAL_VERSION, "event": event, "run": run.to_dict()},
                                                sort_keys=True, separators=(",", ":")) + "\n")
                    handle.flush()
                    os.fsync(handle.fileno())
                os.replace(tmp, self.path)
            except OSError as e:
                raise StorageUnavailableError(f"Cannot compact catalogue journal: {e}") from e
            logger.info(f"Compacted catalogue journal to {len(self._runs)} lines")
            return len(self._runs)

    def _index_run(self, run: RunRecord) -> None:
        if run.run_id not in self._final:
            return
        for step in run.steps:
            if step.status == StepStatus.SUCCEEDED and step.signature is not None:
                self._index[step.signature_digest].append((run.run_id, step.step_id))

    # -- records -----------------------------------------------------------

    def record(self, run: RunRecord) -> str:
        """
        Open a durable record for a new run.

        Raises:
            DuplicateError: If the run id is already catalogued
        """
        with self._lock:
            if run.run_id in self._runs:
                raise DuplicateError(f"Run {run.run_id} already recorded")
            if not run.submitted_at:
                run.submitted_at = utc_now()
            self._append("open", run)
            self._runs[run.run_id] = run
        logger.info(f"Recorded run {run.run_id} ({run.workflow_name}, {run.flavour})")
        return run.run_id

    def update(self, run: RunRecord) -> None:
        """Replace the in-memory state of an open run (status polling)."""
        with self._lock:
            if run.run_id not in self._runs:
                raise NotFoundError(f"Unknown run {run.run_id}")
            if run.run_id in self._final:
                raise DuplicateError(f"Run {run.run_id} is final and cannot change")
            self._runs[run.run_id] = run

    def finalize(self, run: RunRecord) -> None:
        """Append the terminal state of a run and index its succeeded steps."""
        with self._lock:
            if run.run_id in self._final:
                raise DuplicateError(f"Run {run.run_id} is already final")
            if run.run_id not in self._runs:
                raise NotFoundError(f"Unknown run {run.run_id}")
            run.ended_at = run.ended_at or utc_now()
            self._append("final", run)
            self._runs[run.run_id] = run
            self._final.add(run.run_id)
            self._index_run(run)
        logger.info(f"Finalized run {run.run_id}: {run.status.value}")

    def get(self, run_id: str) -> RunRecord:
        """A snapshot of the run record."""
        with self._lock:
            run = self._runs.get(run_id)
            if run is None:
                raise NotFoundError(f"Unknown run {run_id}")
            return RunRecord.from_dict(run.to_dict())

    def exists(self, run_id: str) -> bool:
        with self._lock:
            return run_id in self._runs

    def is_final(self, run_id: str) -> bool:
        with self._lock:
            return run_id in self._final

    def find_by_idempotency_key(self, key: str) -> Optional[RunRecord]:
        with self._lock:
            for run in self._runs.values():
                if run.idempotency_key == key:
                    return RunRecord.from_dict(run.to_dict())
        return None

    def step_counts(self, run_id: str) -> Dict[str, int]:
        return self.get(run_id).step_counts()

    # -- reuse -------------------------------------------------------------

    def find_reusable(self, signature: StepSignature) -> Optional[Tuple[str, StepResult]]:
        """
        Most recent succeeded step with this signature whose outputs still exist.

        Returns:
            (run_id, StepResult) or None
        """
        with self._lock:
            candidates = list(self._index.get(signature.digest, ()))
            runs = {run_id: self._runs[run_id] for run_id, _ in candidates}
        for run_id, step_id in reversed(candidates):
            step = runs[run_id].step(step_id)
            if step.signature != signature:
                continue
            missing = [o.stored_name for o in step.outputs if not self.store.exists(o.bucket, o.stored_name)]
            if missing:
                logger.warning(f"Reuse candidate {run_id}/{step_id} has lost outputs: {missing}")
                continue
            return run_id, StepResult.from_dict(step.to_dict())
        return None

    # -- queries -----------------------------------------------------------

    def query_runs(self, workflow_name: Optional[str] = None, status: Optional[str] = None,
                   since: Optional[str] = None, until: Optional[str] = None,
                   limit: int = DEFAULT_PAGE_SIZE, offset: int = 0) -> List[Dict[str, Any]]:
        """
        Run summaries, newest first.

        Args:
            workflow_name: Exact template name
            status: One of pending, running, succeeded, failed
            since: Inclusive lower bound on submitted_at
            until: Exclusive upper bound on submitted_at
            limit: Page size
            offset: Page start

        Raises:
            ValidationError: On a malformed filter
        """
        if status is not None and status not in {s.value for s in RunStatus}:
            raise ValidationError(f"Unknown status {status!r}", field="status")
        if limit < 1 or offset < 0:
            raise ValidationError("limit must be >= 1 and offset >= 0", field="limit")
        bounds = {}
        for name, value in (("since", since), ("until", until)):
            try:
                bounds[name] = parse_timestamp(value) if value else None
            except ValueError as e:
                raise ValidationError(f"Malformed time bound {name}: {e}", field=name)
        lower, upper = bounds["since"], bounds["until"]
        if lower is not None and upper is not None and lower >= upper:
            raise ValidationError("since must be before until", field="since")

        with self._lock:
            runs = [RunRecord.from_dict(r.to_dict()) for r in self._runs.values()]
        selected = []
        for run in runs:
            if workflow_name is not None and run.workflow_name != workflow_name:
                continue
            if status is not None and run.status.value != status:
                continue
            submitted = parse_timestamp(run.submitted_at)
            if lower is not None and submitted < lower:
                continue
            if upper is not None and submitted >= upper:
                continue
            selected.append(run)
        selected.sort(key=lambda r: (r.submitted_at, r.run_id), reverse=True)
        return [run.summary() for run in selected[offset:offset + limit]]
