"""
CIMF - Climate Impact Modelling Framework

A workflow engine for climate impact models: content-addressed object
storage, a module registry, workflow templates expanded into DAGs for
single, ensemble and calibration runs, step reuse through the previous
workflow catalogue, and a REST/MCP gateway in front of it all.
"""

__version__ = "0.4.0"
__author__ = "CIMF Development Team"
__description__ = "Climate impact workflow engine with ensemble risk metrics and calibration"

from .core.errors import CimfError
from .core.object_store import ObjectStore
from .core.module_registry import ModuleRegistry, ModuleSpec
from .core.template_catalog import TemplateCatalog
from .core.pwc import PreviousWorkflowCatalogue
from .core.execution_engine import WorkflowExecutor
from .core.calibration_service import CalibrationService
from .sdk.config import CimfConfig, CimfOptions

__all__ = [
    'CimfError',
    'ObjectStore',
    'ModuleRegistry',
    'ModuleSpec',
    'TemplateCatalog',
    'PreviousWorkflowCatalogue',
    'WorkflowExecutor',
    'CalibrationService',
    'CimfConfig',
    'CimfOptions',
    '__version__',
    '__author__',
    '__description__'
]
