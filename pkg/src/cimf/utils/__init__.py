"""
CIMF utilities module.

Canonical JSON, digests, timestamps and logging setup shared by every package layer.
"""

from .helpers import (
    canonical_json,
    configure_logging,
    document_digest,
    parse_timestamp,
    sha256_file,
    sha256_hex,
    utc_now,
)

__all__ = [
    'canonical_json',
    'configure_logging',
    'document_digest',
    'parse_timestamp',
    'sha256_file',
    'sha256_hex',
    'utc_now',
]
