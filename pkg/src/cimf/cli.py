"""
`cimf` command line: reference client of the REST API plus `serve` and `bootstrap`.

    cimf serve [--bootstrap]
    cimf bootstrap
    cimf submit -f payload.json [--wait]
    cimf status <run_id>
    cimf fetch <run_id> <object> [-o FILE]
    cimf runs list [--workflow NAME] [--status STATUS] | runs show <run_id>
    cimf module onboard --spec spec.json --executable FILE | module list
    cimf template register -f template.json | template show NAME [--version HASH]
"""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import requests

from .sdk.config import CimfConfig
from .utils.helpers import configure_logging

logger = logging.getLogger(__name__)

DEFAULT_URL = "http://127.0.0.1:8080"
TERMINAL = {"succeeded", "failed"}


class ApiError(Exception):
    def __init__(self, status: int, body: Dict[str, Any]):
        super().__init__(body.get("message") or body.get("error") or f"HTTP {status}")
        self.status = status
        self.body = body


class CimfClient:
    """Thin requests wrapper over the /v1 endpoints."""

    def __init__(self, url: str = DEFAULT_URL, token: Optional[str] = None, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.session = requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"
        self.timeout = timeout

    def _request(self, method: str, path: str, **kwargs) -> requests.Response:
        response = self.session.request(method, f"{self.url}{path}", timeout=self.timeout, **kwargs)
        if response.status_code >= 400:
            try:
                body = response.json()
            except ValueError:
                body = {"error": response.text}
            raise ApiError(response.status_code, body)
        return response

    def submit(self, payload: Dict[str, Any], idempotency_key: Optional[str] = None) -> Dict[str, Any]:
        headers = {"Idempotency-Key": idempotency_key} if idempotency_key else {}
        return self._request("POST", "/v1/workflows", json=payload, headers=headers).json()

    def status(self, run_id: str) -> Dict[str, Any]:
        return self._request("GET", f"/v1/runs/{run_id}").json()

    def record(self, run_id: str) -> Dict[str, Any]:
        return self._request("GET", f"/v1/runs/{run_id}/record").json()

    def fetch(self, run_id: str, name: str) -> bytes:
        return self._request("GET", f"/v1/runs/{run_id}/objects/{name}").content

    def list_runs(self, **filters) -> List[Dict[str, Any]]:
        params = {k: v for k, v in filters.items() if v is not None}
        return self._request("GET", "/v1/runs", params=params).json()["runs"]

    def onboard(self, spec: bytes, executable: bytes) -> Dict[str, Any]:
        files = {"spec": ("spec.json", spec, "application/json"),
                 "executable": ("executable", executable, "application/octet-stream")}
        return self._request("POST", "/v1/modules", files=files).json()

    def list_modules(self) -> List[Dict[str, Any]]:
        return self._request("GET", "/v1/modules").json()["modules"]

    def register_template(self, document: bytes) -> Dict[str, Any]:
        return self._request("POST", "/v1/templates", data=document,
                             headers={"Content-Type": "application/json"}).json()

    def show_template(self, name: str, version: Optional[str] = None) -> Dict[str, Any]:
        params = {"version": version} if version else None
        return self._request("GET", f"/v1/templates/{name}", params=params).json()

    def wait(self, run_id: str, timeout: float = 3600.0, interval: float = 0.5) -> Dict[str, Any]:
        deadline = time.monotonic() + timeout
        while True:
            status = self.status(run_id)
            if status["status"] in TERMINAL:
                return status
            if time.monotonic() > deadline:
                raise TimeoutError(f"Run {run_id} not finished after {timeout}s")
            time.sleep(interval)


def _print(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimf", description="Climate impact workflow engine")
    parser.add_argument("--url", default=os.getenv("CIMF_URL", DEFAULT_URL), help="API base URL")
    parser.add_argument("--token", default=os.getenv("CIMF_TOKEN"), help="Bearer token for admin calls")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="Run the REST API")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.add_argument("--store-root")
    serve.add_argument("--bootstrap", action="store_true", help="On-board the bundled modules first")

    boot = sub.add_parser("bootstrap", help="On-board bundled modules and the flood template into a store")
    boot.add_argument("--store-root")

    submit = sub.add_parser("submit", help="Submit a workflow payload")
    submit.add_argument("-f", "--file", required=True, help="Payload JSON file ('-' for stdin)")
    submit.add_argument("--idempotency-key")
    submit.add_argument("--wait", action="store_true", help="Poll until the run is final")

    status = sub.add_parser("status", help="Show a run's status")
    status.add_argument("run_id")

    fetch = sub.add_parser("fetch", help="Download an object of a run")
    fetch.add_argument("run_id")
    fetch.add_argument("object")
    fetch.add_argument("-o", "--output", help="Write to file instead of stdout")

    runs = sub.add_parser("runs", help="Query the run catalogue")
    runs_sub = runs.add_subparsers(dest="runs_command", required=True)
    runs_list = runs_sub.add_parser("list")
    runs_list.add_argument("--workflow", dest="workflow_name")
    runs_list.add_argument("--status")
    runs_list.add_argument("--since")
    runs_list.add_argument("--until")
    runs_list.add_argument("--limit", type=int, default=50)
    runs_list.add_argument("--offset", type=int, default=0)
    runs_show = runs_sub.add_parser("show")
    runs_show.add_argument("run_id")

    module = sub.add_parser("module", help="Module administration")
    module_sub = module.add_subparsers(dest="module_command", required=True)
    onboard = module_sub.add_parser("onboard")
    onboard.add_argument("--spec", required=True)
    onboard.add_argument("--executable", required=True)
    module_sub.add_parser("list")

    template = sub.add_parser("template", help="Template administration")
    template_sub = template.add_subparsers(dest="template_command", required=True)
    register = template_sub.add_parser("register")
    register.add_argument("-f", "--file", required=True)
    show = template_sub.add_parser("show")
    show.add_argument("name")
    show.add_argument("--version")
    return parser


def _config(args: argparse.Namespace) -> CimfConfig:
    config = CimfConfig.from_env()
    if getattr(args, "store_root", None):
        config.store_root = Path(args.store_root)
    if getattr(args, "host", None):
        config.host = args.host
    if getattr(args, "port", None):
        config.port = args.port
    if args.log_level:
        config.log_level = args.log_level
    return config


def _read(path: str) -> bytes:
    return sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()


def run(args: argparse.Namespace) -> int:
    if args.command == "serve":
        from .server.main import run_server
        run_server(_config(args), bootstrap=args.bootstrap)
        return 0
    if args.command == "bootstrap":
        from .server.gateway import CimfGateway
        gateway = CimfGateway(_config(args))
        try:
            _print(gateway.bootstrap())
        finally:
            gateway.shutdown()
        return 0

    client = CimfClient(args.url, args.token)
    if args.command == "submit":
        accepted = client.submit(json.loads(_read(args.file)), idempotency_key=args.idempotency_key)
        _print(client.wait(accepted["run_id"]) if args.wait else accepted)
    elif args.command == "status":
        _print(client.status(args.run_id))
    elif args.command == "fetch":
        data = client.fetch(args.run_id, args.object)
        if args.output:
            Path(args.output).write_bytes(data)
            logger.info(f"Wrote {len(data)} bytes to {args.output}")
        else:
            sys.stdout.buffer.write(data)
    elif args.command == "runs":
        if args.runs_command == "list":
            _print(client.list_runs(workflow_name=args.workflow_name, status=args.status, since=args.since,
                                    until=args.until, limit=args.limit, offset=args.offset))
        else:
            _print(client.record(args.run_id))
    elif args.command == "module":
        if args.module_command == "onboard":
            _print(client.onboard(_read(args.spec), _read(args.executable)))
        else:
            _print(client.list_modules())
    elif args.command == "template":
        if args.template_command == "register":
            _print(client.register_template(_read(args.file)))
        else:
            _print(client.show_template(args.name, args.version))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except ApiError as e:
        print(json.dumps({"status": e.status, **e.body}, indent=2), file=sys.stderr)
        return 1
    except requests.ConnectionError as e:
        print(f"Cannot reach {args.url}: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, TimeoutError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
