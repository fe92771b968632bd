"""
Local process invocation for module executables.
"""

import logging
import os
import signal
import subprocess
import time
from pathlib import Path
from typing import Dict, List, Optional

from .command_execution import CommandExecution

logger = logging.getLogger(__name__)

TIMEOUT_EXIT_CODE = 124  # Standard timeout exit code


class Command:
    """
    Runs one argv in a working directory with a wall-clock limit.

    The child gets its own process group so a timeout kills the whole tree.
    """

    def __init__(self, working_directory: Path, env: Optional[Dict[str, str]] = None):
        """
        Initialize the command runner.

        Args:
            working_directory: Directory the process starts in
            env: Complete environment for the child (defaults to os.environ)
        """
        self.working_directory = Path(working_directory)
        self.env = dict(env) if env is not None else dict(os.environ)

    def run(self, argv: List[str], timeout: Optional[float] = None) -> CommandExecution:
        """
        Execute an argument vector.

        Args:
            argv: Program and arguments; no shell is involved
            timeout: Optional wall-clock limit in seconds

        Returns:
            A CommandExecution with captured output; never raises for
            process-level failures
        """
        started = time.monotonic()
        try:
            process = subprocess.Popen(
                argv,
                cwd=self.working_directory,
                env=self.env,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                errors="replace",
                start_new_session=True,
            )
        except OSError as e:
            return CommandExecution(
                stderr=f"Command execution failed: {e}",
                exit_code=126 if isinstance(e, PermissionError) else 127,
                argv=argv,
                duration=time.monotonic() - started,
            )

        try:
            stdout, stderr = process.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            self._kill(process)
            stdout, stderr = process.communicate()
            logger.warning(f"Command timed out after {timeout} seconds: {argv[0]}")
            return CommandExecution(
                stdout=stdout,
                stderr=(stderr or "") + f"\nCommand timed out after {timeout} seconds",
                exit_code=TIMEOUT_EXIT_CODE,
                argv=argv,
                timeout=True,
                duration=time.monotonic() - started,
            )

        return CommandExecution(
            stdout=stdout,
            stderr=stderr,
            exit_code=process.returncode,
            argv=argv,
            duration=time.monotonic() - started,
        )

    @staticmethod
    def _kill(process: subprocess.Popen) -> None:
        try:
            os.killpg(os.getpgid(process.pid), signal.SIGKILL)
        except (ProcessLookupError, PermissionError, OSError):
            try:
                process.kill()
            except OSError:
                pass
