"""
Command execution results for module invocations.
"""

from typing import List, Optional


class CommandExecution:
    """
    Represents one module process run inside a step sandbox.

    Holds the captured output streams, the exit status and whether the
    wall-clock limit was hit.
    """

    def __init__(
        self,
        stdout: Optional[str] = None,
        stderr: Optional[str] = None,
        exit_code: Optional[int] = None,
        argv: Optional[List[str]] = None,
        timeout: Optional[bool] = None,
        duration: float = 0.0,
    ):
        """
        Initialize a command execution instance.

        Args:
            stdout: Standard output of the process
            stderr: Standard error of the process
            exit_code: Exit code (124 on timeout)
            argv: The argument vector that was executed
            timeout: Whether the process was killed at the wall-clock limit
            duration: Wall-clock seconds spent
        """
        self._stdout = stdout or ""
        self._stderr = stderr or ""
        self._exit_code = exit_code or 0
        self._argv = list(argv or [])
        self._timeout = timeout or False
        self._duration = duration

    def output(self) -> str:
        """Standard output of the process."""
        return self._stdout

    def error(self) -> str:
        """Standard error of the process."""
        return self._stderr

    def has_error(self) -> bool:
        """
        Check if the execution failed.

        Unlike interactive commands, modules may log freely to stderr; only
        the exit status and timeouts count as errors.
        """
        return self._exit_code != 0 or self._timeout

    @property
    def exit_code(self) -> int:
        return self._exit_code

    @property
    def argv(self) -> List[str]:
        return list(self._argv)

    @property
    def timeout(self) -> bool:
        return self._timeout

    @property
    def duration(self) -> float:
        return self._duration

    def log_text(self) -> str:
        """Combined log captured as the step's log object."""
        parts = [f"$ {' '.join(self._argv)}", f"exit_code: {self._exit_code}"]
        if self._timeout:
            parts.append("timeout: true")
        parts.append("--- stdout ---")
        parts.append(self._stdout.rstrip("\n"))
        parts.append("--- stderr ---")
        parts.append(self._stderr.rstrip("\n"))
        return "\n".join(parts) + "\n"
