from fastmcp import FastMCP
import base64
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional
import logging

from .core.errors import CimfError
from .sdk.config import CimfConfig
from .server.gateway import CimfGateway

# Log to a file; stdout carries the MCP protocol
log_file = Path(tempfile.gettempdir()) / "cimf_mcp_server.log"
logging.basicConfig(
    level=os.getenv("CIMF_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(log_file),
        logging.StreamHandler(sys.stderr) if os.getenv('CIMF_MCP_DEBUG') else logging.NullHandler()
    ]
)
logger = logging.getLogger(__name__)

mcp = FastMCP("cimf")

_gateway: Optional[CimfGateway] = None


def get_gateway() -> CimfGateway:
    """Gateway over the store configured by CIMF_* variables, created on first use."""
    global _gateway
    if _gateway is None:
        _gateway = CimfGateway(CimfConfig.from_env())
        if os.getenv("CIMF_MCP_BOOTSTRAP"):
            _gateway.bootstrap()
    return _gateway


def _error(e: CimfError) -> str:
    return json.dumps(e.to_dict(), indent=2)


@mcp.tool
def submit_workflow(payload: Dict[str, Any], idempotency_key: Optional[str] = None) -> str:
    """Submit a workflow payload (workflow_type, spatial_domain, temporal_domain, options). Returns the run id."""
    try:
        return json.dumps(get_gateway().submit(payload, idempotency_key=idempotency_key), indent=2)
    except CimfError as e:
        logger.warning(f"submit_workflow rejected: {e.message}")
        return _error(e)


@mcp.tool
def run_status(run_id: str) -> str:
    """Status of a run with per-step states and reuse counts."""
    try:
        return json.dumps(get_gateway().status(run_id), indent=2)
    except CimfError as e:
        return _error(e)


@mcp.tool
def fetch_object(run_id: str, name: str, max_bytes: int = 1_000_000) -> str:
    """
    Fetch an object of a run by stored name, logical name or file name.

    Text objects are returned as text, anything else base64 encoded.
    """
    try:
        data, obj = get_gateway().results(run_id, name)
    except CimfError as e:
        return _error(e)
    result: Dict[str, Any] = {"stored_name": obj.stored_name, "digest": obj.digest, "size": obj.size,
                              "truncated": len(data) > max_bytes}
    data = data[:max_bytes]
    try:
        result["text"] = data.decode("utf-8")
    except UnicodeDecodeError:
        result["base64"] = base64.b64encode(data).decode("ascii")
    return json.dumps(result, indent=2)


@mcp.tool
def list_runs(workflow_name: Optional[str] = None, status: Optional[str] = None, limit: int = 20) -> str:
    """Recent runs, newest first, optionally filtered by workflow name and status."""
    try:
        return json.dumps(get_gateway().list_runs(workflow_name=workflow_name, status=status, limit=limit),
                          indent=2)
    except CimfError as e:
        return _error(e)


@mcp.tool
def list_modules(name_filter: Optional[str] = None) -> str:
    """On-boarded modules as name, tag and description."""
    return json.dumps(get_gateway().list_modules(name_filter), indent=2)


def main():
    """Entry point for the stdio MCP server."""
    logger.info(f"Starting CIMF MCP server, logging to {log_file}")
    mcp.run()


if __name__ == "__main__":
    main()
