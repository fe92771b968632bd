"""
The bundled modules and the flood template, ready to be on-boarded.

Each module is on-boarded as a small launcher script that imports its
`main` from this package with the current interpreter. The launcher embeds
the digest of the sources it runs, so editing a module or the science
kernel yields a different executable digest and a different step signature.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..core.errors import DuplicateError
from ..core.module_registry import ModuleRegistry, ModuleSpec
from ..core.template_catalog import TemplateCatalog, load_template_file
from ..utils.helpers import document_digest, sha256_file, sha256_hex
from ._wrapper import EXIT_USAGE

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).parent / "templates"
FLOOD_TEMPLATE = TEMPLATES_DIR / "flood.json"
MODULE_TAG = "1.0"


def _io(name: str, required: bool = True, media_hint: str = "", variadic: bool = False) -> Dict[str, Any]:
    return {"logical_name": name, "required": required, "media_hint": media_hint, "variadic": variadic}


def _param(name: str, type_: str, default: Any = None, minimum: Optional[float] = None,
           maximum: Optional[float] = None, description: str = "") -> Dict[str, Any]:
    return {"name": name, "type": type_, "default": default, "minimum": minimum, "maximum": maximum,
            "description": description}


ASC = "text/x-esri-ascii-grid"

# name -> (entry module, extra run_command arguments, declaration)
BUNDLED: Dict[str, Tuple[str, List[str], Dict[str, Any]]] = {
    "cimf-query-static": ("query_static", [], {
        "description": "Clip the source DEM to the payload bounding box",
        "inputs": [_io("dem_source.asc", media_hint=ASC)],
        "outputs": [_io("dem_clip.asc", media_hint=ASC)],
        "params": [
            _param("bbox_min_x", "number"),
            _param("bbox_min_y", "number"),
            _param("bbox_max_x", "number"),
            _param("bbox_max_y", "number"),
            _param("crs_label", "string", ""),
        ],
    }),
    "cimf-preprocess-static": ("preprocess_static", [], {
        "description": "Fill interior nodata holes of the clipped DEM",
        "inputs": [_io("dem_clip.asc", media_hint=ASC)],
        "outputs": [_io("dem.asc", media_hint=ASC)],
        "params": [_param("max_fill_passes", "integer", 1000, minimum=1)],
    }),
    "cimf-preprocess-precip": ("preprocess_precip", [], {
        "description": "Convert and scale the precipitation series to m/h",
        "inputs": [_io("precip_source.csv", media_hint="text/csv")],
        "outputs": [_io("precip.csv", media_hint="text/csv")],
        "params": [
            _param("scale", "number", 1.0, minimum=0),
            _param("units", "string", "m/h"),
            _param("n_steps", "integer", 0, minimum=0),
        ],
    }),
    "flood-toy": ("flood_toy", [], {
        "description": "Reference pluvial flood model (infiltration + steepest-descent routing)",
        "inputs": [_io("dem.asc", media_hint=ASC), _io("precip.csv", media_hint="text/csv")],
        "outputs": [
            _io("depth.asc", media_hint=ASC),
            _io("depth_max.asc", media_hint=ASC),
            _io("daily_max.json", media_hint="application/json"),
            _io("budget.json", media_hint="application/json"),
        ],
        "params": [
            _param("infiltration_rate", "number", 0.005, minimum=0, description="m/h"),
            _param("routing_coefficient", "number", 0.5, minimum=0.001, maximum=1),
            _param("routing_sweeps", "integer", 4, minimum=1),
            _param("timestep", "number", 1.0, minimum=0.001, description="hours"),
            _param("steps_per_day", "integer", 24, minimum=1),
        ],
    }),
    "cimf-extent": ("extent", ["--threshold", "{param:threshold}"], {
        "description": "Flood extent of the peak depth at a threshold",
        "inputs": [_io("depth_max.asc", media_hint=ASC)],
        "outputs": [_io("extent.asc", media_hint=ASC)],
        "params": [_param("threshold", "number", 0.15, minimum=0, description="meters")],
    }),
    "cimf-iou": ("iou", [], {
        "description": "IoU and contingency scores of a predicted extent against ground truth",
        "inputs": [_io("predicted.asc", media_hint=ASC), _io("truth.asc", media_hint=ASC)],
        "outputs": [_io("iou.json", media_hint="application/json")],
        "params": [],
    }),
    "cimf-metrics": ("metrics", [], {
        "description": "Ensemble risk metric over member outputs",
        "inputs": [
            _io("stack_manifest.json", media_hint="application/json"),
            _io("member_{label}.asc", media_hint=ASC, variadic=True),
            _io("series_{label}.json", media_hint="application/json", variadic=True),
        ],
        "outputs": [
            _io("metric.asc", media_hint=ASC),
            _io("metric_summary.json", media_hint="application/json"),
        ],
        "params": [
            _param("metric", "string", "exceedance_probability"),
            _param("threshold", "number", 0.15, minimum=0),
            _param("per_member_reduction", "string", ""),
        ],
    }),
}


def package_root() -> Path:
    """Directory that contains the `cimf` package."""
    return Path(__file__).resolve().parent.parent.parent


def source_files(entry: str, root: Optional[Path] = None) -> List[Path]:
    """Package sources a bundled module runs: its entry module, the wrapper and the science kernel."""
    package = (root or package_root()) / "cimf"
    files = [package / "modules" / f"{entry}.py", package / "modules" / "_wrapper.py"]
    files.extend(sorted((package / "science").glob("*.py")))
    return files


def source_digest(entry: str, root: Optional[Path] = None) -> str:
    """Digest over the relative paths and contents of `source_files`."""
    package = (root or package_root()) / "cimf"
    return document_digest({
        path.relative_to(package).as_posix(): sha256_file(path) for path in source_files(entry, root)
    })


def launcher(entry: str, root: Optional[Path] = None) -> bytes:
    """
    Executable script running `cimf.modules.<entry>.main`.

    The script carries the digest of the module sources, so the executable
    digest changes with them, and it refuses to run once they have drifted.
    """
    root = root or package_root()
    digest = source_digest(entry, root)
    return (
        f"#!{sys.executable}\n"
        f"# source-digest: {digest}\n"
        "import sys\n"
        f"sys.path.insert(0, {str(root)!r})\n"
        "from cimf.modules.bundled import source_digest\n"
        f"if source_digest({entry!r}) != {digest!r}:\n"
        f"    sys.stderr.write('cimf.modules.{entry} changed since on-boarding; publish it under a new tag\\n')\n"
        f"    sys.exit({EXIT_USAGE})\n"
        f"from cimf.modules.{entry} import main\n"
        "sys.exit(main())\n"
    ).encode("utf-8")


def module_spec(name: str) -> ModuleSpec:
    entry, extra, declaration = BUNDLED[name]
    document = dict(declaration)
    document.update({
        "name": name,
        "tag": MODULE_TAG,
        "run_command": [sys.executable, "{executable}", *extra],
        "source_ref": f"cimf.modules.{entry}",
    })
    return ModuleSpec.from_dict(document)


def flood_template() -> Dict[str, Any]:
    return load_template_file(FLOOD_TEMPLATE)


def bootstrap(registry: ModuleRegistry, catalog: TemplateCatalog) -> Dict[str, Any]:
    """
    On-board every bundled module and register the flood template.

    Already registered modules are left alone, so bootstrapping twice is
    harmless. A registered module whose launcher no longer matches the
    package sources is reported as stale; its steps fail until the module
    is published under a new tag.

    Returns:
        Summary with the on-boarded and stale module refs and the template version
    """
    onboarded = []
    stale = []
    for name in BUNDLED:
        executable = launcher(BUNDLED[name][0])
        if registry.is_registered(name, MODULE_TAG):
            if registry.get_spec(name, MODULE_TAG).executable_digest != sha256_hex(executable):
                logger.warning(f"{name}:{MODULE_TAG} was on-boarded from different sources")
                stale.append(f"{name}:{MODULE_TAG}")
            continue
        try:
            registry.onboard_module(module_spec(name), executable)
            onboarded.append(f"{name}:{MODULE_TAG}")
        except DuplicateError:
            pass
    workflow_name, version_hash = catalog.register_template(flood_template())
    logger.info(f"Bootstrap complete: {len(onboarded)} modules on-boarded, "
                f"template {workflow_name}@{version_hash[:16]}")
    return {
        "modules": onboarded,
        "stale": stale,
        "template": {"workflow_name": workflow_name, "version_hash": version_hash},
    }
