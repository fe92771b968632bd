"""
aiohttp REST application over `CimfGateway`.

Endpoints (JSON unless noted):

    GET  /v1/health
    POST /v1/workflows                      submit a payload (202)
    GET  /v1/runs                           list runs (workflow_name, status, since, until, limit, offset)
    GET  /v1/runs/{run_id}                  run status
    GET  /v1/runs/{run_id}/record           full catalogue record
    GET  /v1/runs/{run_id}/objects          object listing
    GET  /v1/runs/{run_id}/objects/{name}   object bytes
    POST /v1/modules                        multipart: spec (JSON) + executable (201)   [auth]
    GET  /v1/modules
    POST /v1/templates                      template document (201)                     [auth]
    GET  /v1/templates
    GET  /v1/templates/{name}               ?version=<hash prefix>

Handlers run the blocking gateway calls in worker threads.
"""

import asyncio
import json
import logging
from typing import Any, Optional

from aiohttp import web

from ..core.errors import CimfError, ValidationError
from ..sdk.config import CimfConfig
from ..utils.helpers import configure_logging
from .gateway import CimfGateway

logger = logging.getLogger(__name__)

GATEWAY_KEY = web.AppKey("gateway", CimfGateway)


@web.middleware
async def error_middleware(request: web.Request, handler):
    try:
        return await handler(request)
    except CimfError as e:
        if e.status_code >= 500:
            logger.error(f"{request.method} {request.path}: {e.message}")
        return web.json_response(e.to_dict(), status=e.status_code)


async def _json_body(request: web.Request) -> Any:
    try:
        return await request.json()
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ValidationError("Request body must be valid JSON", field="")


def _int_query(request: web.Request, name: str, default: int) -> int:
    value = request.query.get(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{name} must be an integer", field=name)


async def _call(fn, *args, **kwargs):
    return await asyncio.to_thread(fn, *args, **kwargs)


def _gateway(request: web.Request) -> CimfGateway:
    return request.app[GATEWAY_KEY]


async def health(request: web.Request) -> web.Response:
    return web.json_response(await _call(_gateway(request).health))


async def submit(request: web.Request) -> web.Response:
    payload = await _json_body(request)
    accepted = await _call(_gateway(request).submit, payload,
                           idempotency_key=request.headers.get("Idempotency-Key"))
    status = 200 if accepted["deduplicated"] else 202
    return web.json_response(accepted, status=status, headers={"Location": f"/v1/runs/{accepted['run_id']}"})


async def list_runs(request: web.Request) -> web.Response:
    query = request.query
    runs = await _call(
        _gateway(request).list_runs,
        workflow_name=query.get("workflow_name"),
        status=query.get("status"),
        since=query.get("since"),
        until=query.get("until"),
        limit=_int_query(request, "limit", 50),
        offset=_int_query(request, "offset", 0),
    )
    return web.json_response({"runs": runs})


async def run_status(request: web.Request) -> web.Response:
    return web.json_response(await _call(_gateway(request).status, request.match_info["run_id"]))


async def run_record(request: web.Request) -> web.Response:
    return web.json_response(await _call(_gateway(request).run_record, request.match_info["run_id"]))


async def list_objects(request: web.Request) -> web.Response:
    objects = await _call(_gateway(request).list_objects, request.match_info["run_id"])
    return web.json_response({"objects": objects})


async def fetch_object(request: web.Request) -> web.Response:
    data, obj = await _call(_gateway(request).results,
                            request.match_info["run_id"], request.match_info["name"])
    return web.Response(
        body=data,
        content_type="application/octet-stream",
        headers={
            "X-Stored-Name": obj.stored_name,
            "X-Digest": f"{obj.algorithm}:{obj.digest}",
            "Content-Disposition": f'attachment; filename="{obj.stored_name}"',
        },
    )


async def onboard_module(request: web.Request) -> web.Response:
    gateway = _gateway(request)
    gateway.authenticate(request.headers.get("Authorization"))
    if not request.content_type.startswith("multipart/"):
        raise ValidationError("Module on-boarding expects multipart/form-data with spec and executable",
                              field="")
    spec: Optional[bytes] = None
    executable: Optional[bytes] = None
    reader = await request.multipart()
    async for part in reader:
        if part.name == "spec":
            spec = await part.read()
        elif part.name == "executable":
            executable = await part.read()
    if spec is None:
        raise ValidationError("Missing multipart field 'spec'", field="spec")
    if executable is None:
        raise ValidationError("Missing multipart field 'executable'", field="executable")
    created = await _call(gateway.onboard, bytes(spec), bytes(executable))
    return web.json_response(created, status=201)


async def list_modules(request: web.Request) -> web.Response:
    modules = await _call(_gateway(request).list_modules, request.query.get("filter"))
    return web.json_response({"modules": modules})


async def register_template(request: web.Request) -> web.Response:
    gateway = _gateway(request)
    gateway.authenticate(request.headers.get("Authorization"))
    created = await _call(gateway.register_template, await request.read())
    return web.json_response(created, status=201)


async def list_templates(request: web.Request) -> web.Response:
    return web.json_response({"templates": await _call(_gateway(request).list_templates)})


async def show_template(request: web.Request) -> web.Response:
    shown = await _call(_gateway(request).show_template,
                        request.match_info["name"], request.query.get("version"))
    return web.json_response(shown)


def create_app(gateway: CimfGateway) -> web.Application:
    """Build the REST application for a gateway."""
    app = web.Application(middlewares=[error_middleware], client_max_size=256 * 1024 * 1024)
    app[GATEWAY_KEY] = gateway
    app.router.add_get("/v1/health", health)
    app.router.add_post("/v1/workflows", submit)
    app.router.add_get("/v1/runs", list_runs)
    app.router.add_get("/v1/runs/{run_id}", run_status)
    app.router.add_get("/v1/runs/{run_id}/record", run_record)
    app.router.add_get("/v1/runs/{run_id}/objects", list_objects)
    app.router.add_get("/v1/runs/{run_id}/objects/{name:.+}", fetch_object)
    app.router.add_post("/v1/modules", onboard_module)
    app.router.add_get("/v1/modules", list_modules)
    app.router.add_post("/v1/templates", register_template)
    app.router.add_get("/v1/templates", list_templates)
    app.router.add_get("/v1/templates/{name}", show_template)

    async def on_cleanup(app: web.Application) -> None:
        await asyncio.to_thread(app[GATEWAY_KEY].shutdown, False)

    app.on_cleanup.append(on_cleanup)
    return app


def run_server(config: Optional[CimfConfig] = None, bootstrap: bool = False) -> None:
    """Serve the REST API until interrupted."""
    config = config or CimfConfig.from_env()
    configure_logging(config.log_level)
    gateway = CimfGateway(config)
    if bootstrap:
        summary = gateway.bootstrap()
        logger.info(f"Bootstrapped: {summary}")
    logger.info(f"Serving CIMF API on http://{config.host}:{config.port}")
    web.run_app(create_app(gateway), host=config.host, port=config.port, print=None)
