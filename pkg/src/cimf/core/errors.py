"""
Exception hierarchy shared by the store, registry, catalogue, engine and gateway.

Every error carries the HTTP status the gateway answers with.
"""

from typing import List, Optional


class CimfError(Exception):
    """Base class for framework errors."""

    status_code = 500

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.field = field

    def to_dict(self) -> dict:
        payload = {"error": type(self).__name__, "message": self.message}
        if self.field:
            payload["field"] = self.field
        return payload


class NotFoundError(CimfError):
    """Unknown bucket, object, module, template or run."""

    status_code = 404


class ValidationError(CimfError):
    """Payload or filter rejected; `field` names the offending path."""

    status_code = 400


class MalformedSpecError(CimfError):
    """Module spec or workflow template is internally inconsistent."""

    status_code = 422


class CycleError(MalformedSpecError):
    """Template edges contain a cycle."""

    def __init__(self, cycle: List[str]):
        super().__init__(f"Cycle detected in template edges: {' -> '.join(cycle)}")
        self.cycle = cycle

    def to_dict(self) -> dict:
        payload = super().to_dict()
        payload["cycle"] = self.cycle
        return payload


class DuplicateError(CimfError):
    """Key already taken: module (name, tag), run id, idempotency key, bucket."""

    status_code = 409


class ConflictError(CimfError):
    """Requested object is still being produced."""

    status_code = 409


class IntegrityError(CimfError):
    """Recomputed digest differs from the recorded digest."""

    status_code = 500


class HashCollisionError(IntegrityError):
    """Same logical name and hash prefix, different full digest."""


class StorageUnavailableError(CimfError):
    """Backing store cannot be read or written."""

    status_code = 503


class SaturatedError(CimfError):
    """Engine is at its active-run limit."""

    status_code = 503


class AuthError(CimfError):
    """Missing or wrong bearer token."""

    status_code = 401


class CalibrationError(CimfError):
    """Calibration cannot proceed or produced no usable iteration."""

    status_code = 422


class ModelError(CimfError):
    """Flood kernel rejected its inputs or hit a numeric fault."""

    status_code = 422
