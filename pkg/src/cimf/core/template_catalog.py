"""
Workflow templates: registration, payload translation and DAG instantiation.

A template is one JSON document with ``params`` (user-facing options),
``steps``, ``edges`` and ``flavours`` sections. Its version hash is the
SHA-256 of the canonical (sorted-key, compact) document. Templates are kept
in the reserved ``_templates`` bucket as ``templates/<name>/<hash>.json``.

Instantiation expands a template into a concrete DAG for one of four
flavours:

- ``single``: one copy of every step;
- ``input_ensemble``: the simulation step, everything downstream of it and
  the steps feeding it the replaced input are replicated once per member,
  shared upstream steps run once, and a fan-in step aggregates members;
- ``parameter_ensemble``: the simulation step and everything downstream of
  it are replicated once per parameter sample, plus the fan-in;
- ``calibration``: the single structure plus the objective step, executed
  iteratively by the calibration service.
"""

import datetime
import graphlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple, Union

from ..utils.helpers import canonical_json, document_digest
from .errors import CycleError, MalformedSpecError, NotFoundError, ValidationError
from .module_registry import ModuleRegistry, ModuleSpec
from .object_store import TEMPLATES_BUCKET, ObjectStore
from .security import validate_identifier, validate_label

logger = logging.getLogger(__name__)

FLAVOURS = ("single", "input_ensemble", "parameter_ensemble", "calibration")
ENSEMBLE_FLAVOURS = ("input_ensemble", "parameter_ensemble")
OPTION_TYPES = ("number", "integer", "string", "boolean", "object", "object_list", "samples")
SCALAR_TYPES = ("number", "integer", "string", "boolean")
BUILTIN_OPTIONS = ("bbox_min_x", "bbox_min_y", "bbox_max_x", "bbox_max_y", "crs_label", "start", "end")
USER_TOKEN = re.compile(r'^\{user:([A-Za-z_][A-Za-z0-9_]*)\}$')
STEP_ID_PATTERN = re.compile(r'^[A-Za-z][A-Za-z0-9_\-]*$')
DEFAULT_INLINE_THRESHOLD = 256  # bytes
MANIFEST_NAME = "stack_manifest.json"


# -- user payload ----------------------------------------------------------

def _number(value: Any, field_path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{field_path} must be a number", field=field_path)
    return float(value)


def _date(value: Any, field_path: str) -> datetime.date:
    if not isinstance(value, str):
        raise ValidationError(f"{field_path} must be an ISO date string", field=field_path)
    try:
        return datetime.date.fromisoformat(value[:10])
    except ValueError:
        raise ValidationError(f"{field_path} is not a valid ISO date: {value!r}", field=field_path)


@dataclass(frozen=True)
class UserPayload:
    """
    The user-facing submission document.

    ``{"workflow_type": ..., "spatial_domain": {"bbox": [...], "crs_label": ...},
    "temporal_domain": {"start": ..., "end": ...}, "options": {...}}``
    """
    workflow_type: str
    bbox: Tuple[float, float, float, float]
    crs_label: str
    start: str
    end: str
    options: Dict[str, Any] = field(default_factory=dict)
    idempotency_key: Optional[str] = None
    reuse: bool = True

    @classmethod
    def from_dict(cls, payload: Any) -> 'UserPayload':
        """
        Validate a payload document.

        Raises:
            ValidationError: Naming the offending field path
        """
        if not isinstance(payload, dict):
            raise ValidationError("Payload must be a JSON object", field="")
        workflow_type = payload.get("workflow_type")
        if not isinstance(workflow_type, str) or not workflow_type:
            raise ValidationError("workflow_type is required", field="workflow_type")

        spatial = payload.get("spatial_domain")
        if not isinstance(spatial, dict):
            raise ValidationError("spatial_domain is required", field="spatial_domain")
        bbox = spatial.get("bbox")
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise ValidationError("bbox must be [min_x, min_y, max_x, max_y]", field="spatial_domain.bbox")
        coords = tuple(_number(v, "spatial_domain.bbox") for v in bbox)
        if not (coords[0] < coords[2] and coords[1] < coords[3]):
            raise ValidationError("bbox requires min_x < max_x and min_y < max_y", field="spatial_domain.bbox")
        crs_label = spatial.get("crs_label", "")
        if not isinstance(crs_label, str):
            raise ValidationError("crs_label must be a string", field="spatial_domain.crs_label")

        temporal = payload.get("temporal_domain")
        if not isinstance(temporal, dict):
            raise ValidationError("temporal_domain is required", field="temporal_domain")
        start = _date(temporal.get("start"), "temporal_domain.start")
        end = _date(temporal.get("end"), "temporal_domain.end")
        if start > end:
            raise ValidationError("start must not be after end", field="temporal_domain")

        options = payload.get("options", {})
        if not isinstance(options, dict):
            raise ValidationError("options must be an object", field="options")
        key = payload.get("idempotency_key")
        if key is not None and not isinstance(key, str):
            raise ValidationError("idempotency_key must be a string", field="idempotency_key")
        reuse = payload.get("reuse", True)
        if not isinstance(reuse, bool):
            raise ValidationError("reuse must be a boolean", field="reuse")
        return cls(
            workflow_type=workflow_type,
            bbox=coords,
            crs_label=crs_label,
            start=start.isoformat(),
            end=end.isoformat(),
            options=dict(options),
            idempotency_key=key,
            reuse=reuse,
        )

    def builtin_options(self) -> Dict[str, Any]:
        return {
            "bbox_min_x": self.bbox[0],
            "bbox_min_y": self.bbox[1],
            "bbox_max_x": self.bbox[2],
            "bbox_max_y": self.bbox[3],
            "crs_label": self.crs_label,
            "start": self.start,
            "end": self.end,
        }


# -- template document -----------------------------------------------------

@dataclass(frozen=True)
class OptionDecl:
    """A user-facing option exposed by a template."""
    name: str
    type: str
    default: Any = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    bind: Tuple[str, ...] = ()
    logical_name: Optional[str] = None
    description: str = ""

    @property
    def is_input(self) -> bool:
        return self.logical_name is not None

    @property
    def extension(self) -> str:
        return PurePosixPath(self.logical_name or "").suffix

    def check_scalar(self, value: Any, field_path: str) -> Any:
        if self.type == "boolean":
            if not isinstance(value, bool):
                raise ValidationError(f"{field_path} must be a boolean", field=field_path)
            return value
        if self.type == "string":
            if not isinstance(value, str):
                raise ValidationError(f"{field_path} must be a string", field=field_path)
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{field_path} must be a {self.type}", field=field_path)
        if self.type == "integer":
            if isinstance(value, float) and not value.is_integer():
                raise ValidationError(f"{field_path} must be an integer", field=field_path)
            value = int(value)
        else:
            value = float(value)
        if self.minimum is not None and value < self.minimum:
            raise ValidationError(f"{field_path}={value} is below minimum {self.minimum}", field=field_path)
        if self.maximum is not None and value > self.maximum:
            raise ValidationError(f"{field_path}={value} is above maximum {self.maximum}", field=field_path)
        return value


@dataclass(frozen=True)
class StepTemplate:
    step_id: str
    module: Tuple[str, str]
    params: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    resources: Dict[str, Any] = field(default_factory=dict)
    flavours: Optional[Tuple[str, ...]] = None

    def active_in(self, flavour: str) -> bool:
        return self.flavours is None or flavour in self.flavours


@dataclass(frozen=True)
class FanInDecl:
    step_id: str
    module: Tuple[str, str]
    member_step: str
    member_inputs: Dict[str, str]
    manifest_input: str = MANIFEST_NAME
    params: Dict[str, Any] = field(default_factory=dict)
    resources: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class FlavourHooks:
    supported: Tuple[str, ...]
    workflow_types: Dict[str, str]
    simulation_step: str
    replicate: Optional[Tuple[str, ...]] = None
    member_option: Optional[str] = None
    replaces: Optional[str] = None
    samples_option: Optional[str] = None
    objective_step: Optional[str] = None
    calibratable: Tuple[str, ...] = ()
    fan_in: Optional[FanInDecl] = None


def _module_ref(value: Any, where: str) -> Tuple[str, str]:
    if not isinstance(value, dict) or "name" not in value or "tag" not in value:
        raise MalformedSpecError(f"{where}: module must be {{name, tag}}", field=where)
    return (str(value["name"]), str(value["tag"]))


@dataclass
class WorkflowTemplate:
    """A parsed template document and its version hash."""
    workflow_name: str
    description: str
    options: Dict[str, OptionDecl]
    steps: Dict[str, StepTemplate]
    edges: List[Tuple[str, str]]
    hooks: FlavourHooks
    document: Dict[str, Any]
    version_hash: str

    @classmethod
    def from_document(cls, document: Any) -> 'WorkflowTemplate':
        """
        Parse a template document without checking module references.

        Raises:
            MalformedSpecError: On structural problems
            CycleError: If the edges contain a cycle
        """
        if not isinstance(document, dict):
            raise MalformedSpecError("Template must be a JSON object")
        try:
            name = validate_identifier(document["workflow_name"], field="workflow_name")
        except KeyError:
            raise MalformedSpecError("workflow_name is required", field="workflow_name")
        except ValidationError as e:
            raise MalformedSpecError(e.message, field="workflow_name") from e

        options: Dict[str, OptionDecl] = {}
        for option_name, raw in (document.get("params") or {}).items():
            where = f"params.{option_name}"
            if option_name in BUILTIN_OPTIONS:
                raise MalformedSpecError(f"{where}: shadows a built-in option", field=where)
            if not isinstance(raw, dict) or raw.get("type") not in OPTION_TYPES:
                raise MalformedSpecError(f"{where}: type must be one of {OPTION_TYPES}", field=where)
            bind = raw.get("bind", [])
            options[option_name] = OptionDecl(
                name=option_name,
                type=raw["type"],
                default=raw.get("default"),
                minimum=raw.get("minimum"),
                maximum=raw.get("maximum"),
                bind=tuple([bind] if isinstance(bind, str) else bind),
                logical_name=raw.get("logical_name"),
                description=raw.get("description", ""),
            )

        steps: Dict[str, StepTemplate] = {}
        for position, raw in enumerate(document.get("steps") or []):
            where = f"steps[{position}]"
            if not isinstance(raw, dict):
                raise MalformedSpecError(f"{where}: step must be an object", field=where)
            step_id = raw.get("step_id")
            if not isinstance(step_id, str) or not STEP_ID_PATTERN.match(step_id):
                raise MalformedSpecError(f"{where}: invalid step_id {step_id!r}", field=where)
            if step_id in steps:
                raise MalformedSpecError(f"Duplicate step_id {step_id!r}", field=where)
            flavours = raw.get("flavours")
            steps[step_id] = StepTemplate(
                step_id=step_id,
                module=_module_ref(raw.get("module"), where),
                params=dict(raw.get("params") or {}),
                inputs=dict(raw.get("inputs") or {}),
                resources=dict(raw.get("resources") or {}),
                flavours=tuple(flavours) if flavours is not None else None,
            )
        if not steps:
            raise MalformedSpecError("Template has no steps", field="steps")

        edges: List[Tuple[str, str]] = []
        for position, edge in enumerate(document.get("edges") or []):
            if not isinstance(edge, (list, tuple)) or len(edge) != 2:
                raise MalformedSpecError(f"edges[{position}] must be [from, to]", field=f"edges[{position}]")
            a, b = edge
            for endpoint in (a, b):
                if endpoint not in steps:
                    raise MalformedSpecError(
                        f"edges[{position}] names unknown step {endpoint!r}", field=f"edges[{position}]"
                    )
            edges.append((a, b))

        sorter = graphlib.TopologicalSorter({s: set() for s in steps})
        for a, b in edges:
            sorter.add(b, a)
        try:
            sorter.prepare()
        except graphlib.CycleError as e:
            raise CycleError(list(e.args[1]))

        hooks = cls._parse_hooks(document.get("flavours") or {}, steps)
        canonical = json.loads(canonical_json(document))
        return cls(
            workflow_name=name,
            description=document.get("description", ""),
            options=options,
            steps=steps,
            edges=edges,
            hooks=hooks,
            document=canonical,
            version_hash=document_digest(document),
        )

    @staticmethod
    def _parse_hooks(raw: Dict[str, Any], steps: Dict[str, StepTemplate]) -> FlavourHooks:
        supported = tuple(raw.get("supported") or ["single"])
        for flavour in supported:
            if flavour not in FLAVOURS:
                raise MalformedSpecError(f"Unknown flavour {flavour!r}", field="flavours.supported")
        workflow_types = dict(raw.get("workflow_types") or {})
        for workflow_type, flavour in workflow_types.items():
            if flavour not in supported:
                raise MalformedSpecError(
                    f"workflow_type {workflow_type!r} maps to unsupported flavour {flavour!r}",
                    field="flavours.workflow_types",
                )
        simulation_step = raw.get("simulation_step")
        if simulation_step not in steps:
            raise MalformedSpecError("flavours.simulation_step must name a step", field="flavours.simulation_step")

        input_ensemble = raw.get("input_ensemble") or {}
        parameter_ensemble = raw.get("parameter_ensemble") or {}
        calibration = raw.get("calibration") or {}

        fan_in = None
        if raw.get("fan_in"):
            f = raw["fan_in"]
            where = "flavours.fan_in"
            step_id = f.get("step_id")
            if not isinstance(step_id, str) or not STEP_ID_PATTERN.match(step_id) or step_id in steps:
                raise MalformedSpecError(f"{where}.step_id must be a new step id", field=where)
            member_step = f.get("member_step", simulation_step)
            if member_step not in steps:
                raise MalformedSpecError(f"{where}.member_step must name a step", field=where)
            fan_in = FanInDecl(
                step_id=step_id,
                module=_module_ref(f.get("module"), where),
                member_step=member_step,
                member_inputs=dict(f.get("member_inputs") or {}),
                manifest_input=f.get("manifest_input", MANIFEST_NAME),
                params=dict(f.get("params") or {}),
                resources=dict(f.get("resources") or {}),
            )
        if any(flavour in ENSEMBLE_FLAVOURS for flavour in supported) and fan_in is None:
            raise MalformedSpecError("Ensemble flavours require a fan_in declaration", field="flavours.fan_in")

        objective = calibration.get("objective")
        if "calibration" in supported and objective not in steps:
            raise MalformedSpecError("Calibration requires an objective step", field="flavours.calibration")

        replicate = raw.get("replicate")
        return FlavourHooks(
            supported=supported,
            workflow_types=workflow_types,
            simulation_step=simulation_step,
            replicate=tuple(replicate) if replicate else None,
            member_option=input_ensemble.get("member_option"),
            replaces=input_ensemble.get("replaces"),
            samples_option=parameter_ensemble.get("samples_option"),
            objective_step=objective,
            calibratable=tuple(calibration.get("calibratable") or ()),
            fan_in=fan_in,
        )

    # -- graph helpers -----------------------------------------------------

    def active_steps(self, flavour: str) -> List[str]:
        return [s for s in self.steps if self.steps[s].active_in(flavour)]

    def _successors(self, active: Set[str]) -> Dict[str, Set[str]]:
        succ: Dict[str, Set[str]] = {s: set() for s in active}
        for a, b in self.edges:
            if a in active and b in active:
                succ[a].add(b)
        return succ

    def _reach(self, start: Iterable[str], adjacency: Dict[str, Set[str]]) -> Set[str]:
        seen: Set[str] = set()
        stack = list(start)
        while stack:
            node = stack.pop()
            for nxt in adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def replicated_steps(self, flavour: str) -> Set[str]:
        """Steps copied once per ensemble member in an ensemble flavour."""
        active = set(self.active_steps(flavour))
        if self.hooks.replicate:
            return {s for s in self.hooks.replicate if s in active}
        succ = self._successors(active)
        pred: Dict[str, Set[str]] = {s: set() for s in active}
        for a, targets in succ.items():
            for b in targets:
                pred[b].add(a)
        sim = self.hooks.simulation_step
        replicated = {sim} | self._reach([sim], succ)
        if flavour == "input_ensemble" and self.hooks.replaces:
            consumers = {
                s for s in active
                if any(b.get("workflow_input") == self.hooks.replaces for b in self.steps[s].inputs.values())
            }
            ancestors = self._reach([sim], pred)
            replicated |= consumers
            replicated |= self._reach(consumers, succ) & ancestors
        return replicated

    # -- validation against the registry ----------------------------------

    def validate(self, registry: ModuleRegistry) -> None:
        """
        Check module references, bindings and data dependencies.

        Raises:
            MalformedSpecError: On dangling references or unbound data dependencies
        """
        specs: Dict[str, ModuleSpec] = {}
        for step in self.steps.values():
            name, tag = step.module
            if not registry.is_registered(name, tag):
                raise MalformedSpecError(
                    f"Step {step.step_id!r} references unregistered module {name}:{tag}",
                    field=f"steps.{step.step_id}.module",
                )
            specs[step.step_id] = registry.get_spec(name, tag)

        edge_set = set(self.edges)
        bound_params: Dict[str, Set[str]] = {s: set(self.steps[s].params) for s in self.steps}
        for option in self.options.values():
            for target in option.bind:
                step_id, _, param = target.partition(".")
                if step_id not in self.steps or not param:
                    raise MalformedSpecError(
                        f"Option {option.name!r} binds unknown target {target!r}", field=f"params.{option.name}"
                    )
                try:
                    specs[step_id].param(param)
                except KeyError:
                    raise MalformedSpecError(
                        f"Option {option.name!r} binds undeclared param {target!r}", field=f"params.{option.name}"
                    )
                bound_params[step_id].add(param)

        for step in self.steps.values():
            spec = specs[step.step_id]
            where = f"steps.{step.step_id}"
            for param, value in step.params.items():
                try:
                    decl = spec.param(param)
                except KeyError:
                    raise MalformedSpecError(f"{where}: module {spec.ref} has no param {param!r}", field=where)
                match = USER_TOKEN.match(value) if isinstance(value, str) else None
                if match:
                    option = match.group(1)
                    if option not in self.options and option not in BUILTIN_OPTIONS:
                        raise MalformedSpecError(f"{where}.{param}: unknown option {option!r}", field=where)
                else:
                    try:
                        decl.check(value, field=f"{where}.params.{param}")
                    except ValidationError as e:
                        raise MalformedSpecError(e.message, field=e.field) from e
            for decl in spec.params:
                if decl.default is None and decl.name not in bound_params[step.step_id]:
                    raise MalformedSpecError(
                        f"{where}: param {decl.name!r} has no default and is not bound", field=where
                    )

            for input_name, binding in step.inputs.items():
                try:
                    io = spec.input(input_name)
                except KeyError:
                    raise MalformedSpecError(
                        f"{where}: module {spec.ref} declares no input {input_name!r}", field=where
                    )
                if io.variadic:
                    raise MalformedSpecError(f"{where}: variadic inputs are for fan-in steps only", field=where)
                self._check_binding(step.step_id, input_name, binding, specs, edge_set)
            for io in spec.inputs:
                if io.required and io.logical_name not in step.inputs:
                    raise MalformedSpecError(
                        f"{where}: required input {io.logical_name!r} is not bound", field=where
                    )

        self._validate_hooks(registry, specs)

    def _check_binding(self, step_id: str, input_name: str, binding: Any,
                       specs: Dict[str, ModuleSpec], edge_set: Set[Tuple[str, str]]) -> None:
        where = f"steps.{step_id}.inputs.{input_name}"
        if not isinstance(binding, dict):
            raise MalformedSpecError(f"{where}: binding must be an object", field=where)
        if "workflow_input" in binding:
            option = self.options.get(binding["workflow_input"])
            if option is None or not option.is_input or option.type != "object":
                raise MalformedSpecError(f"{where}: unknown input option {binding['workflow_input']!r}", field=where)
            return
        producer = binding.get("from_step")
        output = binding.get("output")
        if producer not in self.steps:
            raise MalformedSpecError(f"{where}: unknown producer step {producer!r}", field=where)
        if output not in {o.logical_name for o in specs[producer].outputs}:
            raise MalformedSpecError(f"{where}: step {producer!r} does not produce {output!r}", field=where)
        if (producer, step_id) not in edge_set:
            raise MalformedSpecError(
                f"Unbound data dependency: {step_id!r} consumes {producer}/{output} without an edge",
                field=where,
            )

    def _validate_hooks(self, registry: ModuleRegistry, specs: Dict[str, ModuleSpec]) -> None:
        hooks = self.hooks
        if "input_ensemble" in hooks.supported:
            member = self.options.get(hooks.member_option or "")
            replaced = self.options.get(hooks.replaces or "")
            if member is None or member.type != "object_list" or replaced is None or not replaced.is_input:
                raise MalformedSpecError(
                    "input_ensemble needs an object_list member_option replacing an input option",
                    field="flavours.input_ensemble",
                )
        if "parameter_ensemble" in hooks.supported:
            samples = self.options.get(hooks.samples_option or "")
            if samples is None or samples.type != "samples":
                raise MalformedSpecError("parameter_ensemble needs a samples option", field="flavours.parameter_ensemble")
        for option in hooks.calibratable:
            decl = self.options.get(option)
            if decl is None or decl.type not in ("number", "integer"):
                raise MalformedSpecError(f"Calibratable option {option!r} must be numeric", field="flavours.calibration")

        fan_in = hooks.fan_in
        if fan_in is None:
            return
        name, tag = fan_in.module
        if not registry.is_registered(name, tag):
            raise MalformedSpecError(f"Fan-in references unregistered module {name}:{tag}", field="flavours.fan_in")
        spec = registry.get_spec(name, tag)
        member_outputs = {o.logical_name for o in specs[fan_in.member_step].outputs}
        for variadic, output in fan_in.member_inputs.items():
            try:
                io = spec.input(variadic)
            except KeyError:
                raise MalformedSpecError(f"Fan-in module declares no input {variadic!r}", field="flavours.fan_in")
            if not io.variadic:
                raise MalformedSpecError(f"Fan-in input {variadic!r} must be variadic", field="flavours.fan_in")
            if output not in member_outputs:
                raise MalformedSpecError(
                    f"Member step does not produce {output!r}", field="flavours.fan_in.member_inputs"
                )
        try:
            spec.input(fan_in.manifest_input)
        except KeyError:
            raise MalformedSpecError("Fan-in module does not declare the manifest input", field="flavours.fan_in")
        for param, value in fan_in.params.items():
            try:
                spec.param(param)
            except KeyError:
                raise MalformedSpecError(f"Fan-in module has no param {param!r}", field="flavours.fan_in")
            match = USER_TOKEN.match(value) if isinstance(value, str) else None
            if match and match.group(1) not in self.options and match.group(1) not in BUILTIN_OPTIONS:
                raise MalformedSpecError(f"Fan-in param {param!r} names unknown option", field="flavours.fan_in")


# -- concrete DAG ----------------------------------------------------------

@dataclass(frozen=True)
class InputBinding:
    """Where a concrete step input comes from: a bucket object or a producer step output."""
    stored_name: Optional[str] = None
    from_step: Optional[str] = None
    output: Optional[str] = None
    member: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        if self.stored_name is not None:
            return {"stored_name": self.stored_name}
        data = {"from_step": self.from_step, "output": self.output}
        if self.member is not None:
            data["member"] = self.member
        return data


@dataclass
class ConcreteStep:
    step_id: str
    template_step: str
    module: Tuple[str, str]
    params: Dict[str, Any]
    inputs: Dict[str, InputBinding]
    resources: Dict[str, Any] = field(default_factory=dict)
    member: Optional[str] = None
    fan_in: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step_id": self.step_id,
            "template_step": self.template_step,
            "module": {"name": self.module[0], "tag": self.module[1]},
            "params": self.params,
            "inputs": {name: b.to_dict() for name, b in sorted(self.inputs.items())},
            "resources": self.resources,
            "member": self.member,
            "fan_in": self.fan_in,
        }


@dataclass
class DagInstance:
    run_id: str
    bucket: str
    workflow_name: str
    template_version_hash: str
    flavour: str
    nodes: List[ConcreteStep]
    edges: List[Tuple[str, str]]
    fan_in: Optional[str] = None
    members: List[str] = field(default_factory=list)
    iterative: bool = False
    engine_payload: Dict[str, Any] = field(default_factory=dict)

    def node(self, step_id: str) -> ConcreteStep:
        for node in self.nodes:
            if node.step_id == step_id:
                return node
        raise KeyError(step_id)

    def predecessors(self, step_id: str) -> List[str]:
        return sorted(a for a, b in self.edges if b == step_id)

    def successors(self, step_id: str) -> List[str]:
        return sorted(b for a, b in self.edges if a == step_id)

    def structure(self) -> Dict[str, Any]:
        """Run-independent shape: node ids, modules, params, inputs and edges."""
        return {
            "flavour": self.flavour,
            "nodes": sorted((n.to_dict() for n in self.nodes), key=lambda n: n["step_id"]),
            "edges": sorted([list(e) for e in self.edges]),
        }

    def to_dict(self) -> Dict[str, Any]:
        data = self.structure()
        data.update({
            "run_id": self.run_id,
            "bucket": self.bucket,
            "workflow_name": self.workflow_name,
            "template_version_hash": self.template_version_hash,
            "fan_in": self.fan_in,
            "members": list(self.members),
            "iterative": self.iterative,
        })
        return data


def topological_order(node_ids: Iterable[str], edges: Iterable[Tuple[str, str]]) -> List[str]:
    """Kahn's algorithm with lexicographic tie-breaking (deterministic)."""
    nodes = sorted(set(node_ids))
    indegree = {n: 0 for n in nodes}
    succ: Dict[str, List[str]] = {n: [] for n in nodes}
    for a, b in edges:
        succ[a].append(b)
        indegree[b] += 1
    ready = sorted(n for n in nodes if indegree[n] == 0)
    order: List[str] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for nxt in sorted(succ[node]):
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)
        ready.sort()
    if len(order) != len(nodes):
        raise MalformedSpecError("DAG is not schedulable: cycle among instantiated steps")
    return order


# -- catalogue -------------------------------------------------------------

class TemplateCatalog:
    """Stores templates and instantiates them into DAGs."""

    def __init__(self, store: ObjectStore, registry: ModuleRegistry,
                 inline_threshold: int = DEFAULT_INLINE_THRESHOLD):
        self.store = store
        self.registry = registry
        self.inline_threshold = inline_threshold
        self.bucket = store.ensure_reserved_bucket(TEMPLATES_BUCKET)
        self._locks: Dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self._parsed: Dict[str, WorkflowTemplate] = {}

    def _lock(self, name: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(name, threading.Lock())

    def register_template(self, document: Union[Dict[str, Any], str, bytes]) -> Tuple[str, str]:
        """
        Validate and store a template document.

        Returns:
            (workflow_name, version_hash)

        Raises:
            MalformedSpecError: Dangling references, unbound data dependencies
            CycleError: Cyclic edges
        """
        if isinstance(document, (str, bytes)):
            try:
                document = json.loads(document)
            except json.JSONDecodeError as e:
                raise MalformedSpecError(f"Template is not valid JSON: {e}") from e
        template = WorkflowTemplate.from_document(document)
        template.validate(self.registry)
        with self._lock(template.workflow_name):
            self.store.put(
                self.bucket,
                f"templates/{template.workflow_name}/{template.version_hash}.json",
                canonical_json(template.document),
            )
            self._parsed[template.version_hash] = template
        logger.info(f"Registered template {template.workflow_name} version {template.version_hash[:16]}")
        return template.workflow_name, template.version_hash

    def _versions(self, workflow_name: str):
        objects = self.store.list(self.bucket, prefix=f"templates/{workflow_name}/")
        return sorted(objects, key=lambda o: (o.created_at, o.stored_name))

    def get(self, workflow_name: str, version: Optional[str] = None) -> WorkflowTemplate:
        """
        Fetch a template; the latest registration unless `version` (hash or prefix) is given.

        Raises:
            NotFoundError: Unknown workflow or version
        """
        versions = self._versions(workflow_name)
        if not versions:
            raise NotFoundError(f"Unknown workflow {workflow_name!r}")
        if version:
            matches = [o for o in versions if PurePosixPath(o.logical_name).stem.startswith(version)]
            hashes = {PurePosixPath(o.logical_name).stem for o in matches}
            if len(hashes) != 1:
                raise NotFoundError(f"Unknown version {version!r} of workflow {workflow_name!r}")
            chosen = matches[-1]
        else:
            chosen = versions[-1]
        version_hash = PurePosixPath(chosen.logical_name).stem
        cached = self._parsed.get(version_hash)
        if cached is not None:
            return cached
        data, _ = self.store.get(self.bucket, chosen.stored_name)
        template = WorkflowTemplate.from_document(json.loads(data))
        if template.version_hash != version_hash:
            raise MalformedSpecError(f"Stored template {chosen.stored_name} does not match its version hash")
        self._parsed[version_hash] = template
        return template

    def show(self, workflow_name: str, version: Optional[str] = None) -> Dict[str, Any]:
        template = self.get(workflow_name, version)
        return {"workflow_name": template.workflow_name, "version_hash": template.version_hash,
                "document": template.document}

    def list_templates(self) -> List[Dict[str, Any]]:
        names = sorted({o.logical_name.split("/")[1] for o in self.store.list(self.bucket, prefix="templates/")})
        rows = []
        for name in names:
            template = self.get(name)
            rows.append({
                "workflow_name": name,
                "version_hash": template.version_hash,
                "description": template.description,
                "workflow_types": dict(template.hooks.workflow_types),
                "versions": len(self._versions(name)),
            })
        return rows

    def resolve_workflow_type(self, workflow_type: str) -> Tuple[str, str]:
        """
        Map a payload workflow_type to (workflow_name, flavour).

        Raises:
            NotFoundError: If no registered template serves the type
        """
        candidates = []
        for name in {o.logical_name.split("/")[1] for o in self.store.list(self.bucket, prefix="templates/")}:
            latest = self._versions(name)[-1]
            template = self.get(name)
            flavour = template.hooks.workflow_types.get(workflow_type)
            if flavour:
                candidates.append((latest.created_at, name, flavour))
        if not candidates:
            raise NotFoundError(f"Unknown workflow_type {workflow_type!r}")
        _, name, flavour = max(candidates)
        return name, flavour

    # -- payload translation ----------------------------------------------

    def validate_options(self, template: WorkflowTemplate, payload: UserPayload) -> Dict[str, Any]:
        """
        Check payload options against the template and fill in defaults.

        Returns:
            Option name -> validated value (built-ins included)

        Raises:
            ValidationError: Naming `options.<name>` paths
        """
        values: Dict[str, Any] = payload.builtin_options()
        for name, value in payload.options.items():
            if name not in template.options:
                raise ValidationError(f"Unknown option {name!r} for workflow {template.workflow_name}",
                                      field=f"options.{name}")
        for name, decl in template.options.items():
            field_path = f"options.{name}"
            value = payload.options.get(name, decl.default)
            if value is None:
                values[name] = None
                continue
            if decl.type in SCALAR_TYPES:
                values[name] = decl.check_scalar(value, field_path)
            elif decl.type == "object":
                if decl.is_input:
                    self._check_input_value(value, field_path)
                elif not isinstance(value, (dict, list)):
                    raise ValidationError(f"{field_path} must be an object or array", field=field_path)
                values[name] = value
            elif decl.type == "object_list":
                if not isinstance(value, list) or not value:
                    raise ValidationError(f"{field_path} must be a non-empty list", field=field_path)
                labels = []
                for position, member in enumerate(value):
                    member_path = f"{field_path}[{position}]"
                    if not isinstance(member, dict) or "label" not in member:
                        raise ValidationError(f"{member_path} needs a label", field=member_path)
                    label = str(member["label"])
                    validate_label(label, field=f"{member_path}.label")
                    labels.append(label)
                    if decl.is_input:
                        self._check_input_value({k: v for k, v in member.items() if k != "label"}, member_path)
                if len(set(labels)) != len(labels):
                    raise ValidationError(f"{field_path} labels must be unique", field=field_path)
                values[name] = value
            elif decl.type == "samples":
                values[name] = self._check_samples(template, value, field_path)
        return values

    @staticmethod
    def _check_input_value(value: Any, field_path: str) -> None:
        if not isinstance(value, dict) or len([k for k in ("path", "inline", "ref") if k in value]) != 1:
            raise ValidationError(f"{field_path} must hold exactly one of path, inline or ref", field=field_path)
        if "ref" in value:
            ref = value["ref"]
            if not isinstance(ref, dict) or not {"bucket", "stored_name"} <= set(ref):
                raise ValidationError(f"{field_path}.ref needs bucket and stored_name", field=f"{field_path}.ref")
        if "inline" in value and not isinstance(value["inline"], str):
            raise ValidationError(f"{field_path}.inline must be a string", field=f"{field_path}.inline")
        if "path" in value and not isinstance(value["path"], str):
            raise ValidationError(f"{field_path}.path must be a string", field=f"{field_path}.path")

    @staticmethod
    def _check_samples(template: WorkflowTemplate, value: Any, field_path: str) -> List[Dict[str, Any]]:
        if not isinstance(value, list) or not value:
            raise ValidationError(f"{field_path} must be a non-empty list of samples", field=field_path)
        samples = []
        for position, sample in enumerate(value):
            sample_path = f"{field_path}[{position}]"
            if not isinstance(sample, dict):
                raise ValidationError(f"{sample_path} must be an object", field=sample_path)
            checked = {}
            for option, option_value in sample.items():
                decl = template.options.get(option)
                if decl is None or decl.type not in SCALAR_TYPES:
                    raise ValidationError(f"{sample_path}: {option!r} is not a scalar option",
                                          field=f"{sample_path}.{option}")
                checked[option] = decl.check_scalar(option_value, f"{sample_path}.{option}")
            samples.append(checked)
        return samples

    def _read_input(self, value: Dict[str, Any], field_path: str) -> bytes:
        if "inline" in value:
            return value["inline"].encode("utf-8")
        if "path" in value:
            try:
                return Path(value["path"]).read_bytes()
            except OSError as e:
                raise ValidationError(f"Cannot read {value['path']}: {e}", field=f"{field_path}.path")
        ref = value["ref"]
        try:
            data, _ = self.store.get(ref["bucket"], ref["stored_name"])
        except NotFoundError as e:
            raise ValidationError(e.message, field=f"{field_path}.ref")
        return data

    def translate_payload(self, payload: Union[UserPayload, Dict[str, Any]], template: WorkflowTemplate,
                          bucket: str) -> Dict[str, Any]:
        """
        Translate a user payload into the engine parameter map.

        Scalars stay inline. Object/array options and strings longer than the
        inline threshold are written to the bucket as ``config/<option>.json``;
        input files are uploaded as ``inputs/<option><ext>`` (ensemble members
        as ``inputs/<option>/<label><ext>``). Identical payloads yield identical
        maps and identical object hashes.
        """
        if not isinstance(payload, UserPayload):
            payload = UserPayload.from_dict(payload)
        values = self.validate_options(template, payload)
        params: Dict[str, Any] = {}
        objects: Dict[str, str] = {}
        members: Dict[str, List[Dict[str, str]]] = {}
        configs: Dict[str, str] = {}

        for name in sorted(values):
            value = values[name]
            decl = template.options.get(name)
            if value is None:
                continue
            if decl is not None and decl.is_input and decl.type == "object":
                obj = self.store.put(bucket, f"inputs/{name}{decl.extension}",
                                     self._read_input(value, f"options.{name}"))
                objects[name] = obj.stored_name
            elif decl is not None and decl.is_input and decl.type == "object_list":
                members[name] = []
                for position, member in enumerate(value):
                    label = str(member["label"])
                    data = self._read_input(member, f"options.{name}[{position}]")
                    obj = self.store.put(bucket, f"inputs/{name}/{label}{decl.extension}", data)
                    members[name].append({"label": label, "stored_name": obj.stored_name})
            elif isinstance(value, (dict, list)) or (
                    isinstance(value, str) and len(value.encode("utf-8")) > self.inline_threshold):
                obj = self.store.put(bucket, f"config/{name}.json", canonical_json(value))
                configs[name] = obj.stored_name
            else:
                params[name] = value

        return {
            "workflow_name": template.workflow_name,
            "template_version_hash": template.version_hash,
            "workflow_type": payload.workflow_type,
            "params": params,
            "objects": objects,
            "members": members,
            "configs": configs,
        }

    # -- instantiation ----------------------------------------------------

    def instantiate(self, workflow_name: str, payload: Union[UserPayload, Dict[str, Any]], bucket: str,
                    run_id: Optional[str] = None, flavour: Optional[str] = None,
                    version: Optional[str] = None) -> DagInstance:
        """
        Expand a template into a concrete DAG for one run.

        Args:
            workflow_name: Registered template name
            payload: User payload (validated here)
            bucket: The run's bucket; receives inputs and config objects
            run_id: Run identifier (defaults to the bucket id)
            flavour: Overrides the flavour derived from the workflow_type
            version: Template version hash (or prefix); latest if omitted

        Raises:
            NotFoundError: Unknown workflow or version
            ValidationError: Payload does not fit the template or flavour
        """
        template = self.get(workflow_name, version)
        if not isinstance(payload, UserPayload):
            payload = UserPayload.from_dict(payload)
        flavour = flavour or template.hooks.workflow_types.get(payload.workflow_type)
        if flavour is None:
            raise NotFoundError(f"Workflow {workflow_name!r} does not serve workflow_type {payload.workflow_type!r}")
        if flavour not in template.hooks.supported:
            raise ValidationError(f"Flavour {flavour!r} is not supported by {workflow_name}", field="workflow_type")

        values = self.validate_options(template, payload)
        engine = self.translate_payload(payload, template, bucket)
        engine["flavour"] = flavour

        labels: List[str] = []
        overrides: Dict[str, Dict[str, Any]] = {}
        member_objects: Dict[str, str] = {}
        hooks = template.hooks
        if flavour == "input_ensemble":
            entries = engine["members"].get(hooks.member_option, [])
            if not entries:
                raise ValidationError("Ensemble size must be at least 1", field=f"options.{hooks.member_option}")
            labels = [e["label"] for e in entries]
            member_objects = {e["label"]: e["stored_name"] for e in entries}
        elif flavour == "parameter_ensemble":
            samples = values.get(hooks.samples_option) or []
            if not samples:
                raise ValidationError("Ensemble size must be at least 1", field=f"options.{hooks.samples_option}")
            labels = [f"s{i:03d}" for i in range(len(samples))]
            overrides = dict(zip(labels, samples))

        for decl in template.options.values():
            if decl.is_input and decl.type == "object" and decl.name not in engine["objects"]:
                if flavour == "input_ensemble" and decl.name == hooks.replaces:
                    continue
                consumers = [s for s in template.active_steps(flavour)
                             if any(b.get("workflow_input") == decl.name for b in template.steps[s].inputs.values())]
                if consumers:
                    raise ValidationError(f"Input option {decl.name!r} is required", field=f"options.{decl.name}")

        active = template.active_steps(flavour)
        replicated = template.replicated_steps(flavour) if flavour in ENSEMBLE_FLAVOURS else set()
        nodes: List[ConcreteStep] = []
        edges: List[Tuple[str, str]] = []

        def node_id(step_id: str, label: Optional[str]) -> str:
            return f"{step_id}[{label}]" if label is not None and step_id in replicated else step_id

        def build(step_id: str, label: Optional[str]) -> ConcreteStep:
            step = template.steps[step_id]
            option_values = dict(values)
            option_values.update(overrides.get(label, {}))
            inputs: Dict[str, InputBinding] = {}
            for input_name, binding in step.inputs.items():
                if "workflow_input" in binding:
                    option = binding["workflow_input"]
                    if flavour == "input_ensemble" and option == hooks.replaces and label is not None:
                        inputs[input_name] = InputBinding(stored_name=member_objects[label])
                    elif option in engine["objects"]:
                        inputs[input_name] = InputBinding(stored_name=engine["objects"][option])
                else:
                    inputs[input_name] = InputBinding(
                        from_step=node_id(binding["from_step"], label), output=binding["output"]
                    )
            return ConcreteStep(
                step_id=node_id(step_id, label),
                template_step=step_id,
                module=step.module,
                params=self._resolve_params(template, step.module, step.params, step_id,
                                            option_values, engine["configs"]),
                inputs=inputs,
                resources=dict(step.resources),
                member=label if step_id in replicated else None,
            )

        active_set = set(active)
        for step_id in active:
            if step_id in replicated:
                for label in labels:
                    nodes.append(build(step_id, label))
            else:
                nodes.append(build(step_id, None))
        for a, b in template.edges:
            if a not in active_set or b not in active_set:
                continue
            if a in replicated or b in replicated:
                if a in replicated and b not in replicated:
                    raise MalformedSpecError(f"Shared step {b!r} depends on replicated step {a!r}")
                for label in labels:
                    edges.append((node_id(a, label), node_id(b, label)))
            else:
                edges.append((a, b))

        fan_in_id = None
        if flavour in ENSEMBLE_FLAVOURS:
            fan_in = hooks.fan_in
            fan_in_id = fan_in.step_id
            manifest = {
                "labels": labels,
                "flavour": flavour,
                "member_step": fan_in.member_step,
                "member_inputs": dict(sorted(fan_in.member_inputs.items())),
            }
            manifest_obj = self.store.put(bucket, f"config/{fan_in.step_id}/{fan_in.manifest_input}",
                                          canonical_json(manifest))
            inputs = {fan_in.manifest_input: InputBinding(stored_name=manifest_obj.stored_name)}
            spec = self.registry.get_spec(*fan_in.module)
            for label in labels:
                producer = node_id(fan_in.member_step, label)
                for variadic, output in fan_in.member_inputs.items():
                    inputs[spec.input(variadic).expand(label)] = InputBinding(
                        from_step=producer, output=output, member=label
                    )
                edges.append((producer, fan_in_id))
            nodes.append(ConcreteStep(
                step_id=fan_in_id,
                template_step=fan_in_id,
                module=fan_in.module,
                params=self._resolve_params(template, fan_in.module, fan_in.params, fan_in_id,
                                            values, engine["configs"]),
                inputs=inputs,
                resources=dict(fan_in.resources),
                fan_in=True,
            ))

        edges = sorted(set(edges))
        order = topological_order([n.step_id for n in nodes], edges)
        by_id = {n.step_id: n for n in nodes}
        dag = DagInstance(
            run_id=run_id or bucket,
            bucket=bucket,
            workflow_name=template.workflow_name,
            template_version_hash=template.version_hash,
            flavour=flavour,
            nodes=[by_id[step_id] for step_id in order],
            edges=edges,
            fan_in=fan_in_id,
            members=labels,
            iterative=flavour == "calibration",
            engine_payload=engine,
        )
        logger.info(
            f"Instantiated {template.workflow_name} ({flavour}) for {dag.run_id}: "
            f"{len(dag.nodes)} steps, {len(dag.edges)} edges"
        )
        return dag

    def _resolve_params(self, template: WorkflowTemplate, module: Tuple[str, str], step_params: Dict[str, Any],
                        step_id: str, option_values: Dict[str, Any], configs: Dict[str, str]) -> Dict[str, Any]:
        spec = self.registry.get_spec(*module)
        resolved: Dict[str, Any] = {p.name: p.default for p in spec.params if p.default is not None}

        def option_value(option: str) -> Any:
            if option in configs and isinstance(option_values.get(option), str):
                return configs[option]
            return option_values.get(option)

        for param, value in step_params.items():
            match = USER_TOKEN.match(value) if isinstance(value, str) else None
            if match:
                value = option_value(match.group(1))
                if value is None:
                    continue
            resolved[param] = value
        for option in template.options.values():
            for target in option.bind:
                target_step, _, param = target.partition(".")
                if target_step == step_id:
                    value = option_value(option.name)
                    if value is not None:
                        resolved[param] = value
        for param, value in list(resolved.items()):
            try:
                resolved[param] = spec.param(param).check(value, field=f"{step_id}.{param}")
            except ValidationError as e:
                raise ValidationError(f"Parameter {step_id}.{param}: {e.message}", field=e.field)
        return dict(sorted(resolved.items()))


def load_template_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a template document from disk."""
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedSpecError(f"Template {path} is not valid JSON: {e}") from e
