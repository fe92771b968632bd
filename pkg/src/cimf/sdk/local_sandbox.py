"""
Per-step sandbox implementing the module wrapper contract.

For every step the engine:

1. creates a fresh sandbox directory;
2. pulls each declared input into it under its logical name (hash suffix stripped);
3. writes ``cimf_params.json`` (resolved params, key-sorted);
4. invokes the run command with the sandbox as working directory and
   ``CIMF_SANDBOX`` set to its absolute path;
5. collects the declared outputs;
6. deletes the sandbox unless it is kept for debugging.
"""

import json
import logging
import os
import re
import shutil
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.security import validate_logical_name
from .command import Command
from .command_execution import CommandExecution

logger = logging.getLogger(__name__)

PARAMS_FILE = "cimf_params.json"
SANDBOX_ENV = "CIMF_SANDBOX"


def params_document(params: Dict[str, Any]) -> bytes:
    """Serialized form of the params file (UTF-8, key-sorted)."""
    return (json.dumps(params, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


class LocalSandbox:
    """
    A disposable working directory for one module invocation.

    Usable as a context manager::

        with LocalSandbox("model", root=tmp) as box:
            box.stage_input("dem.asc", data)
            box.write_params({"k": 0.5})
            execution = box.run(["./module"], timeout=60)
            depth = box.collect("depth.asc")
    """

    def __init__(self, step_id: str, root: Optional[Path] = None, keep: bool = False):
        self.step_id = step_id
        self.root = Path(root) if root else None
        self.keep = keep
        self.path: Optional[Path] = None

    def start(self) -> Path:
        """Create the sandbox directory."""
        if self.path is not None:
            return self.path
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        prefix = "cimf_" + re.sub(r'[^A-Za-z0-9_.-]', '_', self.step_id) + "_"
        self.path = Path(tempfile.mkdtemp(prefix=prefix, dir=self.root)).resolve()
        return self.path

    def stop(self) -> None:
        """Remove the sandbox directory unless kept for debugging."""
        if self.path is None:
            return
        if self.keep:
            logger.info(f"Keeping sandbox of {self.step_id} at {self.path}")
        else:
            shutil.rmtree(self.path, ignore_errors=True)
        self.path = None

    def __enter__(self) -> 'LocalSandbox':
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()

    def _resolve(self, logical_name: str) -> Path:
        if self.path is None:
            raise RuntimeError("Sandbox is not started. Call start() first.")
        validate_logical_name(logical_name)
        return self.path / logical_name

    def stage_input(self, logical_name: str, data: bytes) -> Path:
        """Place an input file at `./<logical_name>`."""
        target = self._resolve(logical_name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        return target

    def write_params(self, params: Dict[str, Any]) -> Path:
        """Write the resolved params file."""
        target = self._resolve(PARAMS_FILE)
        target.write_bytes(params_document(params))
        return target

    def listing(self) -> List[str]:
        """Relative paths of all files currently in the sandbox."""
        if self.path is None:
            return []
        return sorted(
            p.relative_to(self.path).as_posix() for p in self.path.rglob("*") if p.is_file()
        )

    def run(self, argv: List[str], timeout: Optional[float] = None,
            env: Optional[Dict[str, str]] = None) -> CommandExecution:
        """
        Invoke a module inside the sandbox.

        Args:
            argv: Fully substituted run command
            timeout: Wall-clock limit in seconds
            env: Extra environment variables

        Returns:
            The command execution record
        """
        if self.path is None:
            raise RuntimeError("Sandbox is not started. Call start() first.")
        child_env = dict(os.environ)
        child_env.update(env or {})
        child_env[SANDBOX_ENV] = str(self.path)
        return Command(self.path, env=child_env).run(argv, timeout=timeout)

    def collect(self, logical_name: str) -> Optional[bytes]:
        """Read a produced output, or None when the module did not write it."""
        target = self._resolve(logical_name)
        if not target.is_file():
            return None
        return target.read_bytes()
