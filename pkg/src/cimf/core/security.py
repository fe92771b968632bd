"""
Input validation and gateway authentication.

This module provides:
- Logical filename validation (no traversal, no absolute paths)
- Identifier validation for run ids, module names and ensemble labels
- Static bearer-token authentication for admin endpoints
- Audit logging of rejected requests
"""

import hashlib
import hmac
import logging
import re
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from .errors import AuthError, ValidationError

logger = logging.getLogger(__name__)

IDENTIFIER_PATTERN = re.compile(r'^[A-Za-z0-9][A-Za-z0-9_.\-]*$')
LABEL_PATTERN = re.compile(r'^[A-Za-z0-9_.\-]+$')


@dataclass
class SecurityViolation:
    """Represents a rejected request or input."""
    type: str
    message: str
    input_data: str
    timestamp: float


class InputValidator:
    """Validation of names that end up as paths or process arguments."""

    dangerous_chars = ['<', '>', ':', '"', '|', '?', '*', '\\', '\x00']

    def validate_logical_name(self, name: str, field: str = "logical_name") -> str:
        """
        Validate a relative object filename.

        Sub-directories are allowed; absolute paths, `..` and empty
        segments are not.

        Args:
            name: The candidate logical name
            field: Field path reported on failure

        Returns:
            The validated name

        Raises:
            ValidationError: If the name is unsafe
        """
        if not isinstance(name, str) or not name:
            raise ValidationError("Filename must be a non-empty string", field=field)
        if name.startswith('/'):
            raise ValidationError(f"Filename must be relative: {name!r}", field=field)
        for char in self.dangerous_chars:
            if char in name:
                raise ValidationError(f"Filename contains forbidden character {char!r}: {name!r}", field=field)
        segments = name.split('/')
        if any(segment in ('', '.', '..') for segment in segments):
            raise ValidationError(f"Filename contains path traversal or empty segment: {name!r}", field=field)
        return name

    def validate_identifier(self, value: str, field: str = "id") -> str:
        """Validate an identifier used as a directory name (run ids, module names)."""
        if not isinstance(value, str) or not IDENTIFIER_PATTERN.match(value):
            raise ValidationError(f"Invalid identifier: {value!r}", field=field)
        return value

    def validate_label(self, value: str, field: str = "label") -> str:
        """Validate an ensemble member label."""
        if not isinstance(value, str) or not LABEL_PATTERN.match(value):
            raise ValidationError(f"Invalid member label: {value!r}", field=field)
        return value


class SecurityAuditor:
    """Security audit logging and monitoring."""

    def __init__(self, max_violations: int = 1000):
        self.violations: List[SecurityViolation] = []
        self.max_violations = max_violations

    def log_violation(self, violation: SecurityViolation) -> None:
        """Log a security violation."""
        self.violations.append(violation)
        if len(self.violations) > self.max_violations:
            self.violations = self.violations[-self.max_violations:]
        logger.warning(f"Security violation: {violation.type} - {violation.message}")

    def get_security_summary(self) -> Dict[str, Any]:
        """Get security summary statistics."""
        by_type: Dict[str, int] = {}
        for v in self.violations:
            by_type[v.type] = by_type.get(v.type, 0) + 1
        recent = [v for v in self.violations if v.timestamp >= time.time() - 3600]
        return {
            'total_violations': len(self.violations),
            'violations_by_type': by_type,
            'recent_violations': len(recent),
        }


class SecurityManager:
    """Coordinates token authentication, input validation and auditing."""

    def __init__(self, token: Optional[str] = None):
        self.token = token
        self.input_validator = InputValidator()
        self.auditor = SecurityAuditor()
        self._warned_open = False

    @property
    def auth_enabled(self) -> bool:
        return bool(self.token)

    def authenticate(self, authorization: Optional[str]) -> None:
        """
        Check an `Authorization` header against the configured bearer token.

        Raises:
            AuthError: If a token is configured and the header does not carry it
        """
        if not self.token:
            if not self._warned_open:
                logger.warning("No CIMF_TOKEN configured; admin endpoints are unauthenticated")
                self._warned_open = True
            return

        presented = ""
        if authorization and authorization.lower().startswith("bearer "):
            presented = authorization[7:].strip()
        if not presented or not hmac.compare_digest(presented, self.token):
            self.auditor.log_violation(SecurityViolation(
                type="authentication",
                message="Missing or invalid bearer token",
                input_data=hashlib.sha256(presented.encode()).hexdigest()[:16],
                timestamp=time.time(),
            ))
            raise AuthError("Missing or invalid bearer token")


_validator = InputValidator()


def validate_logical_name(name: str, field: str = "logical_name") -> str:
    return _validator.validate_logical_name(name, field)


def validate_identifier(value: str, field: str = "id") -> str:
    return _validator.validate_identifier(value, field)


def validate_label(value: str, field: str = "label") -> str:
    return _validator.validate_label(value, field)
