"""
Module-side half of the sandbox contract.

Bundled modules run in a sandbox directory (``CIMF_SANDBOX``, falling back
to the working directory), read ``cimf_params.json`` and write their
outputs next to their inputs. Exceptions become exit code 1 with a one-line
message on stderr; parameter and usage errors exit with code 2.
"""

import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from ..sdk.local_sandbox import PARAMS_FILE, SANDBOX_ENV
from ..utils.helpers import configure_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Invalid or missing module parameter."""


def sandbox_dir() -> Path:
    return Path(os.environ.get(SANDBOX_ENV) or os.getcwd())


def sandbox_file(name: str) -> Path:
    return sandbox_dir() / name


def load_params() -> Dict[str, Any]:
    path = sandbox_file(PARAMS_FILE)
    if not path.is_file():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"{PARAMS_FILE} is not valid JSON: {e}") from e


def require(params: Dict[str, Any], name: str) -> Any:
    if params.get(name) is None:
        raise UsageError(f"missing parameter {name!r}")
    return params[name]


def write_json(name: str, document: Any) -> Path:
    path = sandbox_file(name)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_module(name: str, body: Callable[[Dict[str, Any]], None], params: Optional[Dict[str, Any]] = None) -> int:
    """
    Execute a module body and map its outcome to an exit code.

    Args:
        name: Module name used as logger name
        body: Callable taking the params dict
        params: Params to use instead of the params file
    """
    configure_logging()
    logger = logging.getLogger(name)
    try:
        body(load_params() if params is None else params)
    except UsageError as e:
        print(f"{name}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("module failure", exc_info=True)
        print(f"{name}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK
