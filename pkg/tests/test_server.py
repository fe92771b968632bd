import asyncio
import json

import aiohttp
import pytest
from aiohttp import test_utils

from cimf.sdk.config import CimfOptions
from cimf.server.gateway import CimfGateway
from cimf.server.main import create_app

TOKEN = "s3cret"


@pytest.fixture
async def client(gateway):
    async with test_utils.TestClient(test_utils.TestServer(create_app(gateway))) as client:
        yield client


@pytest.fixture
async def secured(tmp_path):
    config = (
        CimfOptions.builder()
        .store_root(tmp_path / "secure-store")
        .sandbox_root(tmp_path / "secure-sandboxes")
        .token(TOKEN)
        .build()
    )
    async with test_utils.TestClient(test_utils.TestServer(create_app(CimfGateway(config)))) as client:
        yield client


async def finished(gateway, run_id):
    return await asyncio.to_thread(gateway.wait_for, run_id, 180)


async def test_health(client):
    response = await client.get("/v1/health")
    assert response.status == 200
    body = await response.json()
    assert body["status"] == "ok"
    assert body["modules"] == 7


class TestWorkflows:
    async def test_submit_poll_fetch(self, client, gateway, flood_payload):
        response = await client.post("/v1/workflows", json=flood_payload())
        assert response.status == 202
        accepted = await response.json()
        assert response.headers["Location"] == f"/v1/runs/{accepted['run_id']}"
        await finished(gateway, accepted["run_id"])

        status = await (await client.get(response.headers["Location"])).json()
        assert status["status"] == "succeeded"
        assert status["step_counts"]["succeeded"] == 5

        fetched = await client.get(f"/v1/runs/{accepted['run_id']}/objects/postprocess/extent.asc")
        assert fetched.status == 200
        data, obj = gateway.results(accepted["run_id"], "extent.asc")
        assert await fetched.read() == data
        assert fetched.headers["X-Stored-Name"] == obj.stored_name
        assert fetched.headers["X-Digest"] == f"sha256:{obj.digest}"

        listing = await (await client.get(f"/v1/runs/{accepted['run_id']}/objects")).json()
        assert "logs/model.log" in {o["logical_name"] for o in listing["objects"]}
        record = await (await client.get(f"/v1/runs/{accepted['run_id']}/record")).json()
        assert record["user_payload"] == flood_payload()

    async def test_idempotency_header(self, client, gateway, flood_payload):
        headers = {"Idempotency-Key": "upload-7"}
        first = await client.post("/v1/workflows", json=flood_payload(), headers=headers)
        second = await client.post("/v1/workflows", json=flood_payload(), headers=headers)

        assert (first.status, second.status) == (202, 200)
        run_id = (await first.json())["run_id"]
        assert (await second.json())["run_id"] == run_id
        await finished(gateway, run_id)

    async def test_rejected_payload_names_the_field(self, client, flood_payload):
        response = await client.post("/v1/workflows", json=flood_payload(bogus=True))
        assert response.status == 400
        body = await response.json()
        assert body["error"] == "ValidationError"
        assert body["field"] == "options.bogus"

    async def test_body_must_be_json(self, client):
        response = await client.post("/v1/workflows", data=b"{not json",
                                     headers={"Content-Type": "application/json"})
        assert response.status == 400

    async def test_unknown_workflow_type(self, client, flood_payload):
        response = await client.post("/v1/workflows", json=flood_payload("drought-single"))
        assert response.status == 404

    async def test_unknown_run_and_object(self, client, gateway, flood_payload):
        assert (await client.get("/v1/runs/run-missing")).status == 404
        accepted = await (await client.post("/v1/workflows", json=flood_payload())).json()
        await finished(gateway, accepted["run_id"])
        response = await client.get(f"/v1/runs/{accepted['run_id']}/objects/nothing.asc")
        assert response.status == 404
        assert (await response.json())["error"] == "NotFoundError"


class TestRunQueries:
    @pytest.mark.parametrize("query,field", [
        ("limit=ten", "limit"),
        ("offset=x", "offset"),
        ("status=exploded", "status"),
        ("since=yesterday", "since"),
    ])
    async def test_malformed_filters(self, client, query, field):
        response = await client.get(f"/v1/runs?{query}")
        assert response.status == 400
        assert (await response.json())["field"] == field

    async def test_empty_listing(self, client):
        assert await (await client.get("/v1/runs?workflow_name=flood")).json() == {"runs": []}


class TestCatalogues:
    async def test_modules_and_templates(self, client):
        modules = (await (await client.get("/v1/modules?filter=cimf-")).json())["modules"]
        assert {m["name"] for m in modules} >= {"cimf-metrics", "cimf-iou"}
        assert "flood-toy" not in {m["name"] for m in modules}

        templates = (await (await client.get("/v1/templates")).json())["templates"]
        assert [t["workflow_name"] for t in templates] == ["flood"]
        shown = await (await client.get("/v1/templates/flood")).json()
        assert shown["document"]["workflow_name"] == "flood"
        assert (await client.get("/v1/templates/heat")).status == 404

    async def test_onboard_multipart(self, client):
        spec = {"name": "echo", "tag": "0.1", "run_command": ["/bin/sh", "{executable}"],
                "outputs": [{"logical_name": "out.txt"}]}

        def form():
            data = aiohttp.FormData()
            data.add_field("spec", json.dumps(spec), content_type="application/json")
            data.add_field("executable", b"#!/bin/sh\necho hi > out.txt\n", filename="echo.sh",
                           content_type="application/octet-stream")
            return data

        created = await client.post("/v1/modules", data=form())
        assert created.status == 201
        assert await created.json() == {"name": "echo", "tag": "0.1"}
        assert (await client.post("/v1/modules", data=form())).status == 409

    async def test_onboard_needs_multipart(self, client):
        response = await client.post("/v1/modules", json={"name": "echo"})
        assert response.status == 400

    async def test_cyclic_template_is_rejected(self, client, gateway):
        document = json.loads(json.dumps(gateway.show_template("flood")["document"]))
        document["edges"].append(["iou", "query_static"])
        response = await client.post("/v1/templates", data=json.dumps(document))

        assert response.status == 422
        body = await response.json()
        assert "Cycle" in body["message"]
        assert body["error"] == "CycleError"


class TestAuthentication:
    async def test_admin_endpoints_need_the_token(self, secured):
        assert (await secured.post("/v1/templates", data=b"{}")).status == 401
        wrong = {"Authorization": "Bearer nope"}
        assert (await secured.post("/v1/templates", data=b"{}", headers=wrong)).status == 401

        right = {"Authorization": f"Bearer {TOKEN}"}
        response = await secured.post("/v1/modules", json={"name": "echo"}, headers=right)
        assert response.status == 400

    async def test_reads_stay_open(self, secured):
        response = await secured.get("/v1/health")
        assert response.status == 200
        assert (await response.json())["auth"] is True

    async def test_rejections_show_up_in_health(self, secured):
        await secured.post("/v1/templates", data=b"{}", headers={"Authorization": "Bearer nope"})
        security = (await (await secured.get("/v1/health")).json())["security"]
        assert security["total_violations"] == 1
        assert security["violations_by_type"] == {"authentication": 1}
