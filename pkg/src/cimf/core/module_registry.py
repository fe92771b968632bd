"""
On-boarding and lookup of executable modules.

Specs and executables live in the reserved `_registry` bucket of the object
store::

    specs/<name>/<tag>/spec.json
    bin/<name>/<tag>/module
"""

import json
import logging
import os
import re
import stat
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Tuple, Union

from ..utils.helpers import document_digest, sha256_file
from .errors import DuplicateError, IntegrityError, MalformedSpecError, NotFoundError, ValidationError
from .object_store import REGISTRY_BUCKET, ObjectStore
from .security import validate_identifier, validate_logical_name

logger = logging.getLogger(__name__)

PARAM_TOKEN = re.compile(r'\{param:([A-Za-z_][A-Za-z0-9_]*)\}')
EXECUTABLE_TOKEN = "{executable}"
LABEL_TOKEN = "{label}"
PARAM_TYPES = ("number", "integer", "string", "boolean")


@dataclass(frozen=True)
class IoDecl:
    """A file a module reads or writes, relative to its sandbox."""
    logical_name: str
    required: bool = True
    media_hint: str = ""
    variadic: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "logical_name": self.logical_name,
            "required": self.required,
            "media_hint": self.media_hint,
            "variadic": self.variadic,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'IoDecl':
        return cls(
            logical_name=data["logical_name"],
            required=bool(data.get("required", True)),
            media_hint=data.get("media_hint", ""),
            variadic=bool(data.get("variadic", False)),
        )

    def expand(self, label: str) -> str:
        """Concrete filename of one member of a variadic input."""
        return self.logical_name.replace(LABEL_TOKEN, label)


@dataclass(frozen=True)
class ParamDecl:
    """A typed module parameter with an optional default and bounds."""
    name: str
    type: str
    default: Any = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    description: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "type": self.type,
            "default": self.default,
            "minimum": self.minimum,
            "maximum": self.maximum,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ParamDecl':
        return cls(
            name=data["name"],
            type=data["type"],
            default=data.get("default"),
            minimum=data.get("minimum"),
            maximum=data.get("maximum"),
            description=data.get("description", ""),
        )

    def check(self, value: Any, field: Optional[str] = None) -> Any:
        """
        Validate (and lightly coerce) a value for this parameter.

        Integers are accepted for number params; everything else must match
        the declared type exactly.

        Raises:
            ValidationError: On type or bounds violation
        """
        where = field or self.name
        if self.type == "boolean":
            if not isinstance(value, bool):
                raise ValidationError(f"{where} must be a boolean", field=where)
            return value
        if self.type == "string":
            if not isinstance(value, str):
                raise ValidationError(f"{where} must be a string", field=where)
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{where} must be a {self.type}", field=where)
        if self.type == "integer":
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValidationError(f"{where} must be an integer", field=where)
                value = int(value)
        else:
            value = float(value)
        if self.minimum is not None and value < self.minimum:
            raise ValidationError(f"{where}={value} is below minimum {self.minimum}", field=where)
        if self.maximum is not None and value > self.maximum:
            raise ValidationError(f"{where}={value} is above maximum {self.maximum}", field=where)
        return value


@dataclass(frozen=True)
class ModuleSpec:
    """
    Metadata of an on-boarded executable.

    `run_command` is an argv list; `{param:NAME}` tokens are substituted with
    resolved parameter values and `{executable}` with the staged executable
    path (prepended when absent).
    """
    name: str
    tag: str
    run_command: Tuple[str, ...]
    inputs: Tuple[IoDecl, ...] = ()
    outputs: Tuple[IoDecl, ...] = ()
    params: Tuple[ParamDecl, ...] = ()
    description: str = ""
    source_ref: str = ""
    executable_digest: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str]:
        return (self.name, self.tag)

    @property
    def ref(self) -> str:
        return f"{self.name}:{self.tag}"

    def param(self, name: str) -> ParamDecl:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def input(self, logical_name: str) -> IoDecl:
        for decl in self.inputs:
            if decl.logical_name == logical_name:
                return decl
        raise KeyError(logical_name)

    def declaration(self) -> Dict[str, Any]:
        """The user-supplied part of the spec (no recorded digests)."""
        return {
            "name": self.name,
            "tag": self.tag,
            "run_command": list(self.run_command),
            "inputs": [d.to_dict() for d in self.inputs],
            "outputs": [d.to_dict() for d in self.outputs],
            "params": [p.to_dict() for p in self.params],
            "description": self.description,
            "source_ref": self.source_ref,
        }

    @property
    def spec_digest(self) -> str:
        return document_digest(self.declaration())

    def to_dict(self) -> Dict[str, Any]:
        document = self.declaration()
        document["executable_digest"] = self.executable_digest
        document["spec_digest"] = self.spec_digest
        return document

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModuleSpec':
        try:
            return cls(
                name=data["name"],
                tag=str(data["tag"]),
                run_command=tuple(data.get("run_command") or ()),
                inputs=tuple(IoDecl.from_dict(d) for d in data.get("inputs", [])),
                outputs=tuple(IoDecl.from_dict(d) for d in data.get("outputs", [])),
                params=tuple(ParamDecl.from_dict(p) for p in data.get("params", [])),
                description=data.get("description", ""),
                source_ref=data.get("source_ref", ""),
                executable_digest=data.get("executable_digest"),
            )
        except (KeyError, TypeError) as e:
            raise MalformedSpecError(f"Malformed module spec: missing or invalid field {e}") from e

    def validate(self) -> None:
        """
        Check the spec's internal consistency.

        Raises:
            MalformedSpecError: On undeclared placeholders, duplicate filenames,
                bad parameter declarations or unsafe names
        """
        try:
            validate_identifier(self.name, field="name")
            validate_identifier(self.tag, field="tag")
        except ValidationError as e:
            raise MalformedSpecError(e.message, field=e.field) from e
        if not self.run_command:
            raise MalformedSpecError("run_command must not be empty", field="run_command")

        param_names = [p.name for p in self.params]
        if len(set(param_names)) != len(param_names):
            raise MalformedSpecError("Duplicate parameter names", field="params")
        for token in self.run_command:
            for name in PARAM_TOKEN.findall(token):
                if name not in param_names:
                    raise MalformedSpecError(
                        f"run_command placeholder {{param:{name}}} names no declared param",
                        field="run_command",
                    )

        for section, decls in (("inputs", self.inputs), ("outputs", self.outputs)):
            names = [d.logical_name for d in decls]
            if len(set(names)) != len(names):
                raise MalformedSpecError(f"Duplicate logical filenames in {section}", field=section)
            for decl in decls:
                try:
                    validate_logical_name(decl.expand("x"), field=section)
                except ValidationError as e:
                    raise MalformedSpecError(e.message, field=section) from e
                if decl.variadic != (LABEL_TOKEN in decl.logical_name):
                    raise MalformedSpecError(
                        f"Variadic declarations must (and only they may) contain {LABEL_TOKEN}: "
                        f"{decl.logical_name}",
                        field=section,
                    )
        if any(d.variadic for d in self.outputs):
            raise MalformedSpecError("Outputs cannot be variadic", field="outputs")
        overlap = {d.logical_name for d in self.inputs} & {d.logical_name for d in self.outputs}
        if overlap:
            raise MalformedSpecError(f"Filenames declared as both input and output: {sorted(overlap)}")

        for p in self.params:
            if p.type not in PARAM_TYPES:
                raise MalformedSpecError(f"Param {p.name} has unknown type {p.type!r}", field="params")
            if p.default is not None:
                try:
                    p.check(p.default)
                except ValidationError as e:
                    raise MalformedSpecError(f"Default of param {p.name} is invalid: {e.message}") from e


@dataclass(frozen=True)
class ResolvedModule:
    """A registered spec together with its verified executable."""
    spec: ModuleSpec
    executable_path: Path


class ModuleRegistry:
    """Registry of on-boarded modules, backed by the object store."""

    def __init__(self, store: ObjectStore):
        self.store = store
        self.bucket = store.ensure_reserved_bucket(REGISTRY_BUCKET)
        self._lock = threading.Lock()

    @staticmethod
    def _spec_name(name: str, tag: str) -> str:
        return f"specs/{name}/{tag}/spec.json"

    @staticmethod
    def _exe_name(name: str, tag: str) -> str:
        return f"bin/{name}/{tag}/module"

    def onboard_module(self, spec: ModuleSpec, executable: Union[bytes, BinaryIO]) -> Tuple[str, str]:
        """
        Register a module spec and its executable.

        Args:
            spec: Module declaration
            executable: Executable bytes (binary or interpreter script with shebang)

        Returns:
            The registered (name, tag)

        Raises:
            MalformedSpecError: If the spec is inconsistent or the executable is empty
            DuplicateError: If (name, tag) is already registered
        """
        spec.validate()
        data = executable if isinstance(executable, (bytes, bytearray)) else executable.read()
        if not data:
            raise MalformedSpecError("Executable must not be empty", field="executable")

        with self._lock:
            if self._is_registered(spec.name, spec.tag):
                raise DuplicateError(f"Module {spec.ref} is already registered")

            exe = self.store.put(self.bucket, self._exe_name(spec.name, spec.tag), bytes(data))
            path = self.store.path_of(exe)
            os.chmod(path, os.stat(path).st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)

            recorded = replace(spec, executable_digest=exe.digest)
            self.store.put(
                self.bucket,
                self._spec_name(spec.name, spec.tag),
                json.dumps(recorded.to_dict(), indent=2, sort_keys=True).encode("utf-8"),
            )

        logger.info(f"On-boarded module {spec.ref} (executable {exe.digest[:16]})")
        return spec.key

    def _is_registered(self, name: str, tag: str) -> bool:
        try:
            self.store.head(self.bucket, self._spec_name(name, tag))
            return True
        except NotFoundError:
            return False

    def resolve(self, name: str, tag: str) -> ResolvedModule:
        """
        Look up a module and verify its executable.

        Raises:
            NotFoundError: If the module is not registered
            IntegrityError: If the spec or executable no longer match their digests
        """
        try:
            data, _ = self.store.get(self.bucket, self._spec_name(name, tag))
        except NotFoundError:
            raise NotFoundError(f"Unknown module {name}:{tag}")
        spec = ModuleSpec.from_dict(json.loads(data))

        exe = self.store.head(self.bucket, self._exe_name(name, tag))
        path = self.store.path_of(exe)
        try:
            actual = sha256_file(path)
        except FileNotFoundError:
            raise IntegrityError(f"Executable of {name}:{tag} is missing")
        if actual != spec.executable_digest or exe.digest != spec.executable_digest:
            logger.error(f"Executable integrity failure for {name}:{tag}")
            raise IntegrityError(f"Executable of {name}:{tag} does not match its recorded digest")
        return ResolvedModule(spec=spec, executable_path=path)

    def get_spec(self, name: str, tag: str) -> ModuleSpec:
        """Registered spec without executable verification (catalogue validation)."""
        try:
            data, _ = self.store.get(self.bucket, self._spec_name(name, tag))
        except NotFoundError:
            raise NotFoundError(f"Unknown module {name}:{tag}")
        return ModuleSpec.from_dict(json.loads(data))

    def is_registered(self, name: str, tag: str) -> bool:
        return self._is_registered(name, tag)

    def list_modules(self, name_filter: Optional[str] = None) -> List[Tuple[str, str, str]]:
        """
        List registered modules ordered by (name, tag).

        Args:
            name_filter: Optional substring the module name must contain

        Returns:
            List of (name, tag, description)
        """
        rows = []
        for obj in self.store.list(self.bucket, prefix="specs/"):
            _, name, tag, _ = obj.logical_name.split("/")
            if name_filter and name_filter not in name:
                continue
            data, _ = self.store.get(self.bucket, obj.stored_name)
            rows.append((name, tag, json.loads(data).get("description", "")))
        return sorted(rows, key=lambda row: (row[0], row[1]))


def spec_from_json(text: Union[str, bytes]) -> ModuleSpec:
    """Parse an on-boarding payload document."""
    try:
        return ModuleSpec.from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise MalformedSpecError(f"Module spec is not valid JSON: {e}") from e


__all__ = [
    "IoDecl",
    "ModuleRegistry",
    "ModuleSpec",
    "ParamDecl",
    "ResolvedModule",
    "spec_from_json",
]
