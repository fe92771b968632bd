"""
CIMF SDK - step execution primitives.

Configuration, the sandboxed command runner and the run/step records the
engine and the catalogue exchange.
"""

__version__ = "0.4.0"

from .command import Command
from .command_execution import CommandExecution
from .config import CimfConfig, CimfOptions
from .execution import RunRecord, RunStatus, StepResult, StepSignature, StepStatus
from .local_sandbox import LocalSandbox

__all__ = [
    "Command",
    "CommandExecution",
    "CimfConfig",
    "CimfOptions",
    "LocalSandbox",
    "RunRecord",
    "RunStatus",
    "StepResult",
    "StepSignature",
    "StepStatus",
]
