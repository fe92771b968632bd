"""
Shared fixtures: a store per test, a bootstrapped gateway, small synthetic
inputs and throwaway shell modules for engine tests.
"""

from types import SimpleNamespace
from typing import Any, Dict, Iterable, List, Optional

import pytest

from cimf.core.execution_engine import WorkflowExecutor
from cimf.core.module_registry import ModuleRegistry, ModuleSpec
from cimf.core.object_store import ObjectStore
from cimf.core.pwc import PreviousWorkflowCatalogue
from cimf.core.resource_manager import ResourceManager
from cimf.core.template_catalog import TemplateCatalog
from cimf.science.flood_model import FloodParams
from cimf.science.synthetic import storm, synthetic_dem, truth_extent
from cimf.sdk.config import CimfOptions
from cimf.server.gateway import CimfGateway

GRID_SIZE = 12
TRUTH_INFILTRATION = 0.01


@pytest.fixture
def store(tmp_path):
    return ObjectStore(tmp_path / "store")


@pytest.fixture
def config(tmp_path):
    return (
        CimfOptions.builder()
        .store_root(tmp_path / "store")
        .sandbox_root(tmp_path / "sandboxes")
        .workers(4)
        .max_active_runs(4)
        .step_timeout(120)
        .build()
    )


@pytest.fixture
def gateway(config):
    gateway = CimfGateway(config)
    gateway.bootstrap()
    yield gateway
    gateway.shutdown(wait=True)


@pytest.fixture
def dem():
    return synthetic_dem(size=GRID_SIZE)


@pytest.fixture
def rain():
    return storm()


@pytest.fixture
def truth(dem, rain):
    """Extent produced by the model itself at infiltration_rate=0.01."""
    return truth_extent(dem, rain, FloodParams(infiltration_rate=TRUTH_INFILTRATION))


@pytest.fixture
def flood_payload(dem, rain):
    """Factory of flood payloads on the synthetic grid; keyword options override, None drops."""
    def make(workflow_type: str = "flood-single", **options) -> Dict[str, Any]:
        merged: Dict[str, Any] = {
            "dem": {"inline": dem.to_ascii()},
            "precip": {"inline": rain.to_csv()},
        }
        merged.update(options)
        return {
            "workflow_type": workflow_type,
            "spatial_domain": {"bbox": dem.header.bbox, "crs_label": "EPSG:27700"},
            "temporal_domain": {"start": "2021-12-01", "end": "2021-12-31"},
            "options": {k: v for k, v in merged.items() if v is not None},
        }
    return make


@pytest.fixture
def engine(config):
    """Store, registry, catalogue, run catalogue and executor without bundled modules."""
    store = ObjectStore(config.store_root)
    registry = ModuleRegistry(store)
    catalog = TemplateCatalog(store, registry)
    pwc = PreviousWorkflowCatalogue(config.store_root, store)
    resources = ResourceManager(config.workers, config.max_active_runs)
    executor = WorkflowExecutor(store, registry, pwc, config, resources)
    yield SimpleNamespace(config=config, store=store, registry=registry, catalog=catalog, pwc=pwc,
                          resources=resources, executor=executor)
    resources.shutdown(wait=True)


def shell_spec(name: str, inputs: Iterable[str] = (), outputs: Iterable[str] = ("out.txt",),
               params: Optional[List[Dict[str, Any]]] = None, args: Iterable[str] = ()) -> ModuleSpec:
    return ModuleSpec.from_dict({
        "name": name,
        "tag": "1",
        "run_command": ["/bin/sh", "{executable}", *args],
        "inputs": [{"logical_name": n} for n in inputs],
        "outputs": [{"logical_name": n} for n in outputs],
        "params": params or [],
        "description": f"shell module {name}",
    })


SHELL_MODULES = {
    "emit": (
        shell_spec("emit", params=[{"name": "text", "type": "string", "default": "hello"}],
                   args=["{param:text}"]),
        "printf '%s\\n' \"$1\" > out.txt\n",
    ),
    "relay": (
        shell_spec("relay", inputs=["in.txt"]),
        "cat in.txt > out.txt\necho relay >> out.txt\n",
    ),
    "join": (
        shell_spec("join", inputs=["left.txt", "right.txt"]),
        "cat left.txt right.txt > out.txt\n",
    ),
    "sleeper": (
        shell_spec("sleeper", inputs=["in.txt"]),
        "sleep 30\ncat in.txt > out.txt\n",
    ),
    "liar": (
        shell_spec("liar", inputs=["in.txt"]),
        "echo 'nothing written'\n",
    ),
    "fails": (
        shell_spec("fails", inputs=["in.txt"]),
        "echo boom >&2\nexit 3\n",
    ),
}


@pytest.fixture
def shell_modules(engine):
    """On-board every shell module into the engine's registry."""
    for spec, script in SHELL_MODULES.values():
        engine.registry.onboard_module(spec, ("#!/bin/sh\n" + script).encode("utf-8"))
    return engine


def step(step_id: str, module: str, inputs: Optional[Dict[str, str]] = None,
         params: Optional[Dict[str, Any]] = None, **extra) -> Dict[str, Any]:
    """Template step whose inputs map filename -> "producer/output"."""
    bindings = {}
    for name, source in (inputs or {}).items():
        producer, _, output = source.partition("/")
        bindings[name] = {"from_step": producer, "output": output}
    document = {"step_id": step_id, "module": {"name": module, "tag": "1"}, "inputs": bindings,
                "params": params or {}}
    document.update(extra)
    return document


def plain_template(name: str, steps: List[Dict[str, Any]], edges: List[List[str]],
                   params: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "workflow_name": name,
        "params": params or {},
        "steps": steps,
        "edges": edges,
        "flavours": {"supported": ["single"], "workflow_types": {name: "single"},
                     "simulation_step": steps[0]["step_id"]},
    }


def plain_payload(workflow_type: str, **options) -> Dict[str, Any]:
    return {
        "workflow_type": workflow_type,
        "spatial_domain": {"bbox": [0, 0, 1, 1]},
        "temporal_domain": {"start": "2024-01-01", "end": "2024-01-02"},
        "options": options,
    }


def read_text(store: ObjectStore, obj) -> str:
    return store.get(obj.bucket, obj.stored_name)[0].decode("utf-8")


@pytest.fixture
def wf():
    """Template-building helpers for engine tests."""
    return SimpleNamespace(step=step, template=plain_template, payload=plain_payload, read_text=read_text)


@pytest.fixture
def run_template(shell_modules):
    """Register a template and execute one run of it; returns the finalized record."""
    counter = {"n": 0}

    def run(document: Dict[str, Any], reuse: bool = True, **options):
        name = document["workflow_name"]
        shell_modules.catalog.register_template(document)
        counter["n"] += 1
        run_id = f"{name}-{counter['n']:03d}"
        shell_modules.store.create_bucket(run_id)
        dag = shell_modules.catalog.instantiate(name, plain_payload(name, **options), bucket=run_id)
        return shell_modules.executor.execute(dag, reuse=reuse)
    return run
