"""
Provenance record types: step signatures, step results and run records.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from ..core.object_store import StoredObject
from ..utils.helpers import canonical_json, sha256_hex


class StepStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    REUSED = "reused"
    SKIPPED = "skipped"

    @property
    def terminal(self) -> bool:
        return self not in (StepStatus.PENDING, StepStatus.RUNNING)

    @property
    def ok(self) -> bool:
        return self in (StepStatus.SUCCEEDED, StepStatus.REUSED)


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (RunStatus.SUCCEEDED, RunStatus.FAILED)


@dataclass(frozen=True)
class StepSignature:
    """
    Memoization key of a step.

    Depends only on what determines the step's outputs: module identity,
    executable digest, resolved params and input digests. Timestamps, run
    ids and bucket ids never enter it.
    """
    module_name: str
    module_tag: str
    executable_digest: str
    resolved_params: Dict[str, Any]
    input_digests: Tuple[Tuple[str, str], ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "module_name": self.module_name,
            "module_tag": self.module_tag,
            "executable_digest": self.executable_digest,
            "resolved_params": self.resolved_params,
            "input_digests": [list(pair) for pair in sorted(self.input_digests)],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StepSignature':
        return cls(
            module_name=data["module_name"],
            module_tag=data["module_tag"],
            executable_digest=data["executable_digest"],
            resolved_params=dict(data["resolved_params"]),
            input_digests=tuple(sorted((name, digest) for name, digest in data["input_digests"])),
        )

    def canonical(self) -> bytes:
        return canonical_json(self.to_dict())

    @property
    def digest(self) -> str:
        return sha256_hex(self.canonical())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StepSignature):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.digest)


@dataclass
class StepResult:
    """Outcome of one concrete step within a run."""
    step_id: str
    module: str = ""
    status: StepStatus = StepStatus.PENDING
    signature: Optional[StepSignature] = None
    outputs: List[StoredObject] = field(default_factory=list)
    started_at: Optional[str] = None
    ended_at: Optional[str] = None
    exit_code: Optional[int] = None
    log_ref: Optional[StoredObject] = None
    error: Optional[str] = None
    reused_from: Optional[Dict[str, str]] = None
    member: Optional[str] = None

    @property
    def signature_digest(self) -> Optional[str]:
        return self.signature.digest if self.signature else None

    def output(self, logical_name: str) -> Optional[StoredObject]:
        """Output whose logical name ends with the given declared filename."""
        for obj in self.outputs:
            if obj.logical_name == logical_name or obj.logical_name.endswith("/" + logical_name):
                return obj
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step_id": self.step_id,
            "module": self.module,
            "status": self.status.value,
            "signature": self.signature.to_dict() if self.signature else None,
            "signature_digest": self.signature_digest,
            "outputs": [o.to_dict() for o in self.outputs],
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "exit_code": self.exit_code,
            "log_ref": self.log_ref.to_dict() if self.log_ref else None,
            "error": self.error,
            "reused_from": self.reused_from,
            "member": self.member,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'StepResult':
        return cls(
            step_id=data["step_id"],
            module=data.get("module", ""),
            status=StepStatus(data.get("status", "pending")),
            signature=StepSignature.from_dict(data["signature"]) if data.get("signature") else None,
            outputs=[StoredObject.from_dict(o) for o in data.get("outputs", [])],
            started_at=data.get("started_at"),
            ended_at=data.get("ended_at"),
            exit_code=data.get("exit_code"),
            log_ref=StoredObject.from_dict(data["log_ref"]) if data.get("log_ref") else None,
            error=data.get("error"),
            reused_from=data.get("reused_from"),
            member=data.get("member"),
        )


@dataclass
class RunRecord:
    """
    Catalogue entry of one workflow run.

    `user_payload`, `engine_payload` and `template_version_hash` are fixed
    at record time; steps and status evolve until the run is finalized.
    """
    run_id: str
    workflow_name: str
    template_version_hash: str
    flavour: str
    bucket: str
    user_payload: Dict[str, Any] = field(default_factory=dict)
    engine_payload: Dict[str, Any] = field(default_factory=dict)
    workflow_type: str = ""
    steps: List[StepResult] = field(default_factory=list)
    edges: List[Tuple[str, str]] = field(default_factory=list)
    status: RunStatus = RunStatus.PENDING
    submitted_at: str = ""
    ended_at: Optional[str] = None
    parent_run: Optional[str] = None
    children: List[str] = field(default_factory=list)
    error: Optional[str] = None
    idempotency_key: Optional[str] = None

    def step(self, step_id: str) -> StepResult:
        for result in self.steps:
            if result.step_id == step_id:
                return result
        raise KeyError(step_id)

    def step_counts(self) -> Dict[str, int]:
        counts = {status.value: 0 for status in StepStatus}
        for result in self.steps:
            counts[result.status.value] += 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "workflow_name": self.workflow_name,
            "workflow_type": self.workflow_type,
            "template_version_hash": self.template_version_hash,
            "flavour": self.flavour,
            "bucket": self.bucket,
            "user_payload": self.user_payload,
            "engine_payload": self.engine_payload,
            "steps": [s.to_dict() for s in self.steps],
            "edges": [list(e) for e in self.edges],
            "status": self.status.value,
            "submitted_at": self.submitted_at,
            "ended_at": self.ended_at,
            "parent_run": self.parent_run,
            "children": list(self.children),
            "error": self.error,
            "idempotency_key": self.idempotency_key,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunRecord':
        return cls(
            run_id=data["run_id"],
            workflow_name=data["workflow_name"],
            workflow_type=data.get("workflow_type", ""),
            template_version_hash=data["template_version_hash"],
            flavour=data["flavour"],
            bucket=data["bucket"],
            user_payload=data.get("user_payload", {}),
            engine_payload=data.get("engine_payload", {}),
            steps=[StepResult.from_dict(s) for s in data.get("steps", [])],
            edges=[(a, b) for a, b in data.get("edges", [])],
            status=RunStatus(data.get("status", "pending")),
            submitted_at=data.get("submitted_at", ""),
            ended_at=data.get("ended_at"),
            parent_run=data.get("parent_run"),
            children=list(data.get("children", [])),
            error=data.get("error"),
            idempotency_key=data.get("idempotency_key"),
        )

    def summary(self) -> Dict[str, Any]:
        """Status view used by queries, the REST API and the CLI."""
        counts = self.step_counts()
        return {
            "run_id": self.run_id,
            "workflow_name": self.workflow_name,
            "workflow_type": self.workflow_type,
            "flavour": self.flavour,
            "status": self.status.value,
            "submitted_at": self.submitted_at,
            "ended_at": self.ended_at,
            "step_counts": counts,
            "reused_steps": counts[StepStatus.REUSED.value],
            "pending_steps": counts[StepStatus.PENDING.value] + counts[StepStatus.RUNNING.value],
            "steps": [
                {
                    "step_id": s.step_id,
                    "status": s.status.value,
                    "started_at": s.started_at,
                    "ended_at": s.ended_at,
                    "exit_code": s.exit_code,
                    "error": s.error,
                }
                for s in self.steps
            ],
            "parent_run": self.parent_run,
            "children": list(self.children),
            "error": self.error,
        }
