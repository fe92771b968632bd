"""
Content-addressed, per-run object storage on the local filesystem.

Layout::

    <store_root>/<bucket_id>/<stored_name>
    <store_root>/<bucket_id>/_index.json

`stored_name` is the logical name with the first 16 hex characters of the
SHA-256 digest inserted before the extension (``depth.asc`` ->
``depth.0123456789abcdef.asc``). The full digest is kept in the index and
re-verified on every read.
"""

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import BinaryIO, Dict, List, Optional, Tuple, Union

from ..utils.helpers import HASH_ALGORITHM, HASH_PREFIX_LENGTH, sha256_hex, utc_now
from .errors import (
    DuplicateError,
    HashCollisionError,
    IntegrityError,
    NotFoundError,
    StorageUnavailableError,
    ValidationError,
)
from .security import validate_identifier, validate_logical_name

logger = logging.getLogger(__name__)

INDEX_FILE = "_index.json"
REGISTRY_BUCKET = "_registry"
TEMPLATES_BUCKET = "_templates"
RESERVED_BUCKETS = {REGISTRY_BUCKET, TEMPLATES_BUCKET}


@dataclass(frozen=True)
class StoredObject:
    """An immutable, content-hashed file inside a bucket."""
    bucket: str
    logical_name: str
    stored_name: str
    digest: str
    size: int
    created_at: str

    @property
    def algorithm(self) -> str:
        return HASH_ALGORITHM

    def to_index(self) -> Dict[str, Union[str, int]]:
        return {
            "logical_name": self.logical_name,
            "stored_name": self.stored_name,
            "digest": self.digest,
            "size": self.size,
            "created_at": self.created_at,
        }

    def to_dict(self) -> Dict[str, Union[str, int]]:
        record = self.to_index()
        record["bucket"] = self.bucket
        return record

    @classmethod
    def from_dict(cls, record: Dict, bucket: Optional[str] = None) -> 'StoredObject':
        return cls(
            bucket=bucket if bucket is not None else record["bucket"],
            logical_name=record["logical_name"],
            stored_name=record["stored_name"],
            digest=record["digest"],
            size=int(record["size"]),
            created_at=record["created_at"],
        )


def stored_name_for(logical_name: str, digest: str) -> str:
    """Insert the 16-hex digest prefix between stem and extension of the last path segment."""
    path = PurePosixPath(logical_name)
    suffix = path.suffix
    stem = path.name[: len(path.name) - len(suffix)] if suffix else path.name
    name = f"{stem}.{digest[:HASH_PREFIX_LENGTH]}{suffix}"
    parent = str(path.parent)
    return name if parent == "." else f"{parent}/{name}"


def logical_basename(logical_name: str) -> str:
    """Last path segment of a logical name (the name a module sees in its sandbox)."""
    return PurePosixPath(logical_name).name


class ObjectStore:
    """
    Filesystem-backed object store.

    Safe for concurrent use from threads: writes to one bucket serialize on
    that bucket's lock, objects are written to a temp file and renamed into
    place so readers never see partial content.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._locks: Dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()
        self._cache: Dict[str, Tuple[Tuple[int, int], List[StoredObject]]] = {}
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageUnavailableError(f"Cannot create store root {self.root}: {e}") from e

    # -- buckets -----------------------------------------------------------

    def _lock(self, bucket: str) -> threading.RLock:
        with self._locks_guard:
            lock = self._locks.get(bucket)
            if lock is None:
                lock = self._locks[bucket] = threading.RLock()
            return lock

    def _bucket_dir(self, bucket: str) -> Path:
        return self.root / bucket

    def bucket_exists(self, bucket: str) -> bool:
        return (self._bucket_dir(bucket) / INDEX_FILE).is_file()

    def create_bucket(self, run_id: str) -> str:
        """
        Create the exclusive bucket of a workflow run.

        Args:
            run_id: Run identifier; becomes the bucket id

        Returns:
            The bucket id

        Raises:
            DuplicateError: If the bucket already exists and holds objects
            StorageUnavailableError: If the backing directory cannot be created
        """
        validate_identifier(run_id, field="run_id")
        return self._ensure_bucket(run_id, fresh=True)

    def ensure_reserved_bucket(self, name: str) -> str:
        """Create (if needed) one of the framework's reserved buckets."""
        if name not in RESERVED_BUCKETS:
            raise ValueError(f"Not a reserved bucket: {name}")
        return self._ensure_bucket(name, fresh=False)

    def _ensure_bucket(self, bucket: str, fresh: bool) -> str:
        with self._lock(bucket):
            if self.bucket_exists(bucket):
                if fresh and self._records(bucket):
                    raise DuplicateError(f"Bucket {bucket!r} already exists with content")
                return bucket
            try:
                self._bucket_dir(bucket).mkdir(parents=True, exist_ok=True)
                self._write_index(bucket, [])
            except OSError as e:
                raise StorageUnavailableError(f"Cannot create bucket {bucket!r}: {e}") from e
            logger.info(f"Created bucket {bucket}")
            return bucket

    def list_buckets(self) -> List[str]:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / INDEX_FILE).is_file())

    # -- index -------------------------------------------------------------

    def _index_path(self, bucket: str) -> Path:
        return self._bucket_dir(bucket) / INDEX_FILE

    def _records(self, bucket: str) -> List[StoredObject]:
        path = self._index_path(bucket)
        try:
            stat = path.stat()
        except FileNotFoundError:
            raise NotFoundError(f"Unknown bucket: {bucket}")
        except OSError as e:
            raise StorageUnavailableError(f"Cannot stat index of {bucket!r}: {e}") from e

        key = (stat.st_mtime_ns, stat.st_size)
        cached = self._cache.get(bucket)
        if cached and cached[0] == key:
            return cached[1]
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise StorageUnavailableError(f"Cannot read index of {bucket!r}: {e}") from e
        records = [StoredObject.from_dict(r, bucket=bucket) for r in raw]
        self._cache[bucket] = (key, records)
        return records

    def _write_index(self, bucket: str, records: List[StoredObject]) -> None:
        path = self._index_path(bucket)
        tmp = path.with_name(f"_tmp_{uuid.uuid4().hex}")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump([r.to_index() for r in records], f, indent=1, ensure_ascii=False)
        os.replace(tmp, path)
        stat = path.stat()
        self._cache[bucket] = ((stat.st_mtime_ns, stat.st_size), list(records))

    # -- objects -----------------------------------------------------------

    def put(self, bucket: str, logical_name: str, content: Union[bytes, BinaryIO]) -> StoredObject:
        """
        Store content under a hash-suffixed name.

        Re-putting identical content under the same logical name returns the
        existing object without writing.

        Args:
            bucket: Target bucket
            logical_name: Relative filename, sub-directories allowed
            content: Bytes or a binary stream

        Returns:
            The stored object record

        Raises:
            NotFoundError: If the bucket does not exist
            HashCollisionError: If the hash-prefixed name is taken by different content
        """
        validate_logical_name(logical_name)
        if PurePosixPath(logical_name).parts[0].startswith("_"):
            raise ValidationError(
                f"Top-level names starting with '_' are reserved: {logical_name!r}", field="logical_name"
            )
        data = content if isinstance(content, (bytes, bytearray)) else content.read()
        data = bytes(data)
        digest = sha256_hex(data)
        stored_name = stored_name_for(logical_name, digest)

        with self._lock(bucket):
            records = self._records(bucket)
            for existing in records:
                if existing.stored_name != stored_name:
                    continue
                if existing.digest != digest:
                    raise HashCollisionError(
                        f"Hash prefix collision for {stored_name!r} in bucket {bucket!r}"
                    )
                target = self._bucket_dir(bucket) / existing.stored_name
                if not target.is_file():
                    self._write_file(target, data)
                return existing

            target = self._bucket_dir(bucket) / stored_name
            try:
                self._write_file(target, data)
                obj = StoredObject(
                    bucket=bucket,
                    logical_name=logical_name,
                    stored_name=stored_name,
                    digest=digest,
                    size=len(data),
                    created_at=utc_now(),
                )
                self._write_index(bucket, records + [obj])
            except OSError as e:
                raise StorageUnavailableError(f"Cannot write {logical_name!r} to {bucket!r}: {e}") from e
            logger.debug(f"Stored {bucket}/{stored_name} ({len(data)} bytes)")
            return obj

    @staticmethod
    def _write_file(target: Path, data: bytes) -> None:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(f".{target.name}.{uuid.uuid4().hex}.part")
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, target)

    def head(self, bucket: str, selector: str) -> StoredObject:
        """
        Resolve a selector to its object record without reading content.

        An exact stored_name match wins; otherwise the most recent version of
        the logical name is returned.

        Raises:
            NotFoundError: If nothing matches
        """
        with self._lock(bucket):
            records = self._records(bucket)
        for obj in records:
            if obj.stored_name == selector:
                return obj
        for obj in reversed(records):
            if obj.logical_name == selector:
                return obj
        raise NotFoundError(f"Object {selector!r} not found in bucket {bucket!r}")

    def get(self, bucket: str, selector: str) -> Tuple[bytes, StoredObject]:
        """
        Read an object and verify its digest.

        Args:
            bucket: Bucket to read from
            selector: A logical_name or stored_name

        Returns:
            Tuple of (content bytes, object record)

        Raises:
            NotFoundError: If the object or its backing file is missing
            IntegrityError: If the content no longer hashes to the recorded digest
        """
        obj = self.head(bucket, selector)
        try:
            with open(self.path_of(obj), "rb") as f:
                data = f.read()
        except FileNotFoundError:
            raise NotFoundError(f"Backing file of {bucket}/{obj.stored_name} is missing")
        except OSError as e:
            raise StorageUnavailableError(f"Cannot read {bucket}/{obj.stored_name}: {e}") from e
        if sha256_hex(data) != obj.digest:
            logger.error(f"Integrity failure on {bucket}/{obj.stored_name}")
            raise IntegrityError(f"Content of {bucket}/{obj.stored_name} does not match its recorded digest")
        return data, obj

    def list(self, bucket: str, prefix: Optional[str] = None) -> List[StoredObject]:
        """
        List objects ordered by stored_name.

        Args:
            bucket: Bucket to list
            prefix: Optional stored_name prefix filter

        Raises:
            NotFoundError: If the bucket does not exist
        """
        with self._lock(bucket):
            records = list(self._records(bucket))
        if prefix:
            records = [r for r in records if r.stored_name.startswith(prefix)]
        return sorted(records, key=lambda r: r.stored_name)

    def exists(self, bucket: str, stored_name: str) -> bool:
        """Whether the object is indexed and its backing file is present."""
        try:
            obj = self.head(bucket, stored_name)
        except NotFoundError:
            return False
        return obj.stored_name == stored_name and self.path_of(obj).is_file()

    def path_of(self, obj: StoredObject) -> Path:
        """Backing file of an object."""
        return self._bucket_dir(obj.bucket) / obj.stored_name

    def copy_from(
        self,
        source_bucket: str,
        selector: str,
        target_bucket: str,
        logical_name: Optional[str] = None,
    ) -> StoredObject:
        """Import an object from another bucket, verifying it on the way."""
        data, obj = self.get(source_bucket, selector)
        return self.put(target_bucket, logical_name or obj.logical_name, data)

    def delete(self, bucket: str, stored_name: str) -> None:
        """Remove an object and its index entry (administrative use only)."""
        with self._lock(bucket):
            records = self._records(bucket)
            remaining = [r for r in records if r.stored_name != stored_name]
            if len(remaining) == len(records):
                raise NotFoundError(f"Object {stored_name!r} not found in bucket {bucket!r}")
            (self._bucket_dir(bucket) / stored_name).unlink(missing_ok=True)
            self._write_index(bucket, remaining)

