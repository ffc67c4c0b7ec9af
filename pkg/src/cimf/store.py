"""Content-addressed object store backed by a local directory tree.

Layout::

    <root>/<bucket_id>/<stored_name>
    <root>/<bucket_id>/_index.json

Each object's stored name carries the first 16 hex characters of its
SHA-256 digest between stem and extension (``dem.asc`` ->
``dem.0123456789abcdef.asc``). The full digest lives in the index and is
checked on every read.
"""
from __future__ import annotations

import json
import os
import posixpath
import re
import tempfile
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO

from filelock import FileLock

from .errors import CimfError, Duplicate, IntegrityError, NotFound
from .hashing import SUFFIX_LEN, digest_bytes

INDEX_NAME = "_index.json"
_LOCK_NAME = "_index.lock"
_BUCKET_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")
_SUFFIX_RE = re.compile(r"\.[0-9a-f]{16}(?=(\.[^./]*)?$)")


class HashPrefixCollision(CimfError):
    pass


def now_rfc3339() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def check_logical_name(name: str) -> str:
    """Reject absolute paths, traversal, and reserved names."""
    if not isinstance(name, str) or not name or "\\" in name or "\x00" in name:
        raise ValueError(f"invalid object name {name!r}")
    if name.startswith("/") or posixpath.normpath(name) != name:
        raise ValueError(f"object name must be a normalised relative path: {name!r}")
    if any(part in ("", ".", "..") or part.startswith("_") for part in name.split("/")):
        raise ValueError(f"object name contains a reserved or traversal segment: {name!r}")
    return name


def split_name(name: str) -> tuple[str, str]:
    """Split into (stem, extension); the extension is the last dotted suffix."""
    head, base = posixpath.split(name)
    stem, ext = posixpath.splitext(base)
    if not stem:  # dotfiles such as ".env"
        stem, ext = base, ""
    return posixpath.join(head, stem) if head else stem, ext


def stored_name_for(logical_name: str, digest: str) -> str:
    stem, ext = split_name(logical_name)
    return f"{stem}.{digest[:SUFFIX_LEN]}{ext}"


def strip_hash(stored_name: str) -> str:
    """Inverse of :func:`stored_name_for`."""
    return _SUFFIX_RE.sub("", stored_name, count=1)


@dataclass(frozen=True)
class StoredObject:
    bucket: str
    logical_name: str
    stored_name: str
    digest: str
    size: int
    created_at: str
    algorithm: str = "sha256"

    def to_index(self) -> dict:
        return {
            "logical_name": self.logical_name,
            "stored_name": self.stored_name,
            "digest": self.digest,
            "size": self.size,
            "created_at": self.created_at,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StoredObject":
        return cls(d["bucket"], d["logical_name"], d["stored_name"], d["digest"],
                   int(d["size"]), d["created_at"], d.get("algorithm", "sha256"))


class ObjectStore:
    """Per-run buckets of immutable, hash-suffixed files."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()

    # -- internals ---------------------------------------------------------
    def _bucket_dir(self, bucket: str) -> Path:
        if not isinstance(bucket, str) or not _BUCKET_RE.match(bucket):
            raise ValueError(f"invalid bucket id {bucket!r}")
        return self.root / bucket

    def _require(self, bucket: str) -> Path:
        path = self._bucket_dir(bucket)
        if not (path / INDEX_NAME).exists():
            raise NotFound(f"unknown bucket {bucket!r}")
        return path

    def _lock(self, bucket: str):
        with self._locks_guard:
            tlock = self._locks.setdefault(bucket, threading.RLock())
        flock = FileLock(str(self._bucket_dir(bucket) / _LOCK_NAME))
        return _DualLock(tlock, flock)

    def _read_index(self, path: Path) -> list[dict]:
        with open(path / INDEX_NAME, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def _write_index(self, path: Path, entries: list[dict]) -> None:
        _atomic_write(path / INDEX_NAME, json.dumps(entries, indent=1).encode("utf-8"))

    def _record(self, bucket: str, entry: dict) -> StoredObject:
        return StoredObject(bucket=bucket, **entry)

    # -- public API --------------------------------------------------------
    def create_bucket(self, run_id: str) -> str:
        """Create (or idempotently return) the bucket owned by ``run_id``."""
        path = self._bucket_dir(run_id)
        path.mkdir(parents=True, exist_ok=True)
        with self._lock(run_id):
            index = path / INDEX_NAME
            if index.exists():
                try:
                    self._read_index(path)
                except (OSError, ValueError) as exc:
                    raise Duplicate(f"bucket {run_id!r} exists in an unreadable state") from exc
            else:
                stray = [p for p in path.iterdir() if p.name != _LOCK_NAME]
                if stray:
                    raise Duplicate(f"bucket directory {run_id!r} has content but no index")
                self._write_index(path, [])
        return run_id

    def has_bucket(self, bucket: str) -> bool:
        try:
            return (self._bucket_dir(bucket) / INDEX_NAME).exists()
        except ValueError:
            return False

    def put(self, bucket: str, logical_name: str, content: bytes | BinaryIO) -> StoredObject:
        check_logical_name(logical_name)
        path = self._require(bucket)
        data = content if isinstance(content, (bytes, bytearray)) else content.read()
        data = bytes(data)
        digest = digest_bytes(data)
        stored = stored_name_for(logical_name, digest)
        with self._lock(bucket):
            entries = self._read_index(path)
            for e in entries:
                if e["stored_name"] == stored:
                    if e["digest"] != digest:
                        raise HashPrefixCollision(
                            f"{stored}: digest prefix collision ({e['digest']} vs {digest})")
                    return self._record(bucket, e)
            target = path / stored
            target.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(target, data)
            entry = {
                "logical_name": logical_name,
                "stored_name": stored,
                "digest": digest,
                "size": len(data),
                "created_at": now_rfc3339(),
            }
            entries.append(entry)
            self._write_index(path, entries)
        return self._record(bucket, entry)

    def put_file(self, bucket: str, logical_name: str, path) -> StoredObject:
        with open(path, "rb") as fh:
            return self.put(bucket, logical_name, fh.read())

    def stat(self, bucket: str, selector: str) -> StoredObject:
        """Resolve a stored name, or a logical name to its latest version."""
        path = self._require(bucket)
        entries = self._read_index(path)
        for e in entries:
            if e["stored_name"] == selector:
                return self._record(bucket, e)
        matches = [(e["created_at"], i, e) for i, e in enumerate(entries)
                   if e["logical_name"] == selector]
        if not matches:
            raise NotFound(f"{selector!r} not found in bucket {bucket!r}")
        return self._record(bucket, max(matches, key=lambda m: (m[0], m[1]))[2])

    def exists(self, bucket: str, selector: str) -> bool:
        try:
            obj = self.stat(bucket, selector)
        except (NotFound, ValueError):
            return False
        return (self._bucket_dir(bucket) / obj.stored_name).is_file()

    def get(self, bucket: str, selector: str) -> tuple[bytes, StoredObject]:
        obj = self.stat(bucket, selector)
        target = self._bucket_dir(bucket) / obj.stored_name
        try:
            data = target.read_bytes()
        except FileNotFoundError:
            raise NotFound(f"backing file for {obj.stored_name!r} is missing") from None
        if digest_bytes(data) != obj.digest:
            raise IntegrityError(f"{bucket}/{obj.stored_name}: content does not match recorded digest")
        return data, obj

    def path_of(self, obj: StoredObject) -> Path:
        return self._bucket_dir(obj.bucket) / obj.stored_name

    def list(self, bucket: str, prefix: str | None = None) -> list[StoredObject]:
        path = self._require(bucket)
        entries = self._read_index(path)
        if prefix:
            entries = [e for e in entries if e["logical_name"].startswith(prefix)
                       or e["stored_name"].startswith(prefix)]
        return [self._record(bucket, e) for e in sorted(entries, key=lambda e: e["stored_name"])]

    def copy(self, obj: StoredObject, bucket: str, logical_name: str | None = None) -> StoredObject:
        data, _ = self.get(obj.bucket, obj.stored_name)
        return self.put(bucket, logical_name or obj.logical_name, data)


class _DualLock:
    """Thread lock first, then the inter-process file lock."""

    def __init__(self, tlock, flock):
        self.tlock, self.flock = tlock, flock

    def __enter__(self):
        self.tlock.acquire()
        try:
            self.flock.acquire()
        except BaseException:
            self.tlock.release()
            raise
        return self

    def __exit__(self, *exc):
        try:
            self.flock.release()
        finally:
            self.tlock.release()


def _atomic_write(target: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=str(target.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
