"""
Core workflow services: storage, registry, templates, execution, catalogue and calibration.

Submodules are imported directly (``from cimf.core.object_store import ObjectStore``);
only the error types are re-exported here.
"""

from .errors import CimfError, NotFoundError, ValidationError

__all__ = ["CimfError", "NotFoundError", "ValidationError"]
