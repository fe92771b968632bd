"""
Small shared helpers: canonical JSON, content digests, timestamps and logging setup.
"""

import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, BinaryIO, Optional, Union

HASH_ALGORITHM = "sha256"
HASH_PREFIX_LENGTH = 16

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def canonical_json(document: Any) -> bytes:
    """
    Serialize a JSON-compatible document canonically.

    Keys are sorted and all insignificant whitespace is stripped, so two
    structurally equal documents always serialize to the same bytes.

    Args:
        document: Any JSON-serializable value

    Returns:
        UTF-8 encoded canonical serialization
    """
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    """Lowercase hex SHA-256 digest of a byte string."""
    return hashlib.sha256(data).hexdigest()


def sha256_stream(stream: BinaryIO, chunk_size: int = 1 << 20) -> str:
    """Lowercase hex SHA-256 digest of a binary stream, read in chunks."""
    digest = hashlib.sha256()
    for chunk in iter(lambda: stream.read(chunk_size), b""):
        digest.update(chunk)
    return digest.hexdigest()


def sha256_file(path: Union[str, Path]) -> str:
    """Lowercase hex SHA-256 digest of a file's contents."""
    with open(path, "rb") as f:
        return sha256_stream(f)


def document_digest(document: Any) -> str:
    """Digest of the canonical serialization of a JSON document."""
    return sha256_hex(canonical_json(document))


def utc_now() -> str:
    """Current UTC time as an RFC 3339 string with microsecond precision."""
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_timestamp(value: str) -> datetime:
    """
    Parse an RFC 3339 timestamp or ISO date into an aware UTC datetime.

    Raises:
        ValueError: If the value is not a recognizable timestamp
    """
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def configure_logging(level: Optional[str] = None, log_file: Optional[Path] = None) -> None:
    """
    Install the package-wide logging format.

    Args:
        level: Level name; defaults to CIMF_LOG_LEVEL or INFO
        log_file: When given, log to this file instead of stderr
    """
    level_name = (level or os.environ.get("CIMF_LOG_LEVEL", "INFO")).upper()
    handlers = [logging.FileHandler(log_file)] if log_file else [logging.StreamHandler(sys.stderr)]
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT, handlers=handlers)
