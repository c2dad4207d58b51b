"""Filesystem-backed object store with containers and lifecycle events.

Data lives at root/{container}/{path}. Per-container metadata (version,
content type, creation time) is an append-only JSONL log under
root/.meta/, replayed on open; the latest line per path wins. Overwrites
go through a temp file plus os.replace, so readers never see torn
bytes. One BlobCreated event is handed to the publisher after the write
is fully readable, inside the per-path lock, so per-path event order
follows version order.
"""

from __future__ import annotations

import json
import os
import re
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable

from ..clock import Clock, WallClock, parse_rfc3339, rfc3339

DEFAULT_MAX_BLOB_BYTES = 64 * 1024 * 1024

_CONTAINER_RE = re.compile(r"^[a-z0-9-]{3,63}$")


class StoreError(Exception):
    pass


class UnknownContainer(StoreError):
    pass


class AlreadyExists(StoreError):
    pass


class InvalidName(StoreError):
    pass


class InvalidPath(StoreError):
    pass


class NotFound(StoreError):
    pass


class BlobTooLarge(StoreError):
    pass


class StorageFailure(StoreError):
    pass


@dataclass(frozen=True)
class Blob:
    container: str
    path: str
    data: bytes
    content_type: str
    size: int
    created_at: datetime
    version: int


@dataclass(frozen=True)
class BlobEntry:
    path: str
    size: int
    created_at: datetime
    version: int
    content_type: str


@dataclass(frozen=True)
class BlobEvent:
    event_id: str
    kind: str  # "BlobCreated" | "BlobDeleted"
    container: str
    path: str
    size: int
    emitted_at: datetime

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "kind": self.kind,
            "container": self.container,
            "path": self.path,
            "size": self.size,
            "emitted_at": rfc3339(self.emitted_at),
        }


def validate_container_name(name: str) -> None:
    if not isinstance(name, str) or not _CONTAINER_RE.match(name):
        raise InvalidName(f"container name must match [a-z0-9-]{{3,63}}: {name!r}")


def validate_path(path: str) -> None:
    if not isinstance(path, str) or not path:
        raise InvalidPath("path must be non-empty")
    if path.startswith("/"):
        raise InvalidPath(f"path must be relative: {path!r}")
    if "\\" in path or "\x00" in path:
        raise InvalidPath(f"path contains forbidden characters: {path!r}")
    for segment in path.split("/"):
        if segment in ("", ".", ".."):
            raise InvalidPath(f"path contains empty or dot segment: {path!r}")


class BlobStore:
    """Single-instance store; safe for concurrent callers.

    Writes are serialized per (container, path) and parallel across
    paths. `publish` is called once per successful put/delete with the
    corresponding event; it must be cheap or internally buffered (the
    event bus enqueue qualifies).
    """

    def __init__(
        self,
        root: str | Path,
        publish: Callable[[BlobEvent], object] | None = None,
        max_blob_bytes: int = DEFAULT_MAX_BLOB_BYTES,
        clock: Clock | None = None,
    ):
        self.root = Path(root)
        self._publish = publish
        self._max_blob_bytes = max_blob_bytes
        self._clock = clock or WallClock()
        self._meta_dir = self.root / ".meta"
        self._tmp_dir = self.root / ".tmp"
        self.root.mkdir(parents=True, exist_ok=True)
        self._meta_dir.mkdir(exist_ok=True)
        self._tmp_dir.mkdir(exist_ok=True)

        self._master_lock = threading.Lock()
        self._path_locks: dict[tuple[str, str], threading.RLock] = {}
        self._container_locks: dict[str, threading.Lock] = {}
        # container -> {path: BlobEntry}; loaded from the meta logs.
        self._index: dict[str, dict[str, BlobEntry]] = {}
        self._counters = {"created": 0, "deleted": 0}
        self._load()

    # -- containers ------------------------------------------------------

    def create_container(self, name: str) -> None:
        validate_container_name(name)
        with self._master_lock:
            if name in self._index:
                raise AlreadyExists(f"container exists: {name}")
            try:
                (self.root / name).mkdir(exist_ok=True)
                (self._meta_dir / f"{name}.log").touch()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            self._index[name] = {}
            self._container_locks[name] = threading.Lock()

    def container_exists(self, name: str) -> bool:
        with self._master_lock:
            return name in self._index

    def list_containers(self) -> list[str]:
        with self._master_lock:
            return sorted(self._index)

    # -- blobs -----------------------------------------------------------

    def put_blob(
        self,
        container: str,
        path: str,
        data: bytes,
        content_type: str = "application/octet-stream",
    ) -> Blob:
        self._require_container(container)
        validate_path(path)
        if len(data) > self._max_blob_bytes:
            raise BlobTooLarge(f"{len(data)} bytes exceeds cap {self._max_blob_bytes}")
        with self._path_lock(container, path):
            now = self._clock.now_utc()
            prev = self._index[container].get(path)
            entry = BlobEntry(
                path=path,
                size=len(data),
                created_at=now,
                version=(prev.version + 1) if prev else 1,
                content_type=content_type,
            )
            target = self.root / container / path
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                tmp = self._tmp_dir / f"{uuid.uuid4().hex}.part"
                tmp.write_bytes(data)
                os.replace(tmp, target)  # atomic on POSIX
                self._append_meta(container, entry)
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            with self._container_lock(container):
                self._index[container][path] = entry
                self._counters["created"] += 1
            self._emit("BlobCreated", container, path, len(data), now)
            return Blob(
                container=container,
                path=path,
                data=data,
                content_type=content_type,
                size=entry.size,
                created_at=now,
                version=entry.version,
            )

    def get_blob(self, container: str, path: str) -> Blob:
        self._require_container(container)
        validate_path(path)
        # Short hold pairs bytes with the matching version metadata.
        with self._path_lock(container, path):
            entry = self._index[container].get(path)
            if entry is None:
                raise NotFound(f"{container}/{path}")
            try:
                data = (self.root / container / path).read_bytes()
            except FileNotFoundError:
                raise NotFound(f"{container}/{path}") from None
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        return Blob(
            container=container,
            path=path,
            data=data,
            content_type=entry.content_type,
            size=entry.size,
            created_at=entry.created_at,
            version=entry.version,
        )

    def list_blobs(self, container: str, prefix: str = "") -> list[BlobEntry]:
        self._require_container(container)
        with self._container_lock(container):
            entries = [
                e for p, e in self._index[container].items() if p.startswith(prefix)
            ]
        return sorted(entries, key=lambda e: e.path)

    def delete_blob(self, container: str, path: str) -> None:
        self._require_container(container)
        validate_path(path)
        with self._path_lock(container, path):
            entry = self._index[container].get(path)
            if entry is None:
                raise NotFound(f"{container}/{path}")
            now = self._clock.now_utc()
            try:
                (self.root / container / path).unlink(missing_ok=True)
                self._append_meta(container, entry, deleted=True)
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            with self._container_lock(container):
                self._index[container].pop(path, None)
                self._counters["deleted"] += 1
            self._emit("BlobDeleted", container, path, entry.size, now)

    def event_counts(self) -> dict[str, int]:
        with self._master_lock:
            return dict(self._counters)

    # -- internals -------------------------------------------------------

    def _emit(self, kind: str, container: str, path: str, size: int, at: datetime) -> None:
        if self._publish is None:
            return
        self._publish(
            BlobEvent(
                event_id=uuid.uuid4().hex,
                kind=kind,
                container=container,
                path=path,
                size=size,
                emitted_at=at,
            )
        )

    def _require_container(self, container: str) -> None:
        with self._master_lock:
            if container not in self._index:
                raise UnknownContainer(container)

    def _path_lock(self, container: str, path: str) -> threading.RLock:
        # RLock: the publisher callback may read the blob back synchronously.
        key = (container, path)
        with self._master_lock:
            lock = self._path_locks.get(key)
            if lock is None:
                lock = self._path_locks[key] = threading.RLock()
            return lock

    def _container_lock(self, container: str) -> threading.Lock:
        with self._master_lock:
            return self._container_locks[container]

    def _append_meta(self, container: str, entry: BlobEntry, deleted: bool = False) -> None:
        line = json.dumps(
            {
                "path": entry.path,
                "size": entry.size,
                "created_at": rfc3339(entry.created_at),
                "version": entry.version,
                "content_type": entry.content_type,
                "deleted": deleted,
            },
            separators=(",", ":"),
        )
        with self._container_lock(container):
            with open(self._meta_dir / f"{container}.log", "a") as fh:
                fh.write(line + "\n")

    def _load(self) -> None:
        for log_path in sorted(self._meta_dir.glob("*.log")):
            container = log_path.stem
            index: dict[str, BlobEntry] = {}
            with open(log_path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    if rec.get("deleted"):
                        index.pop(rec["path"], None)
                    else:
                        index[rec["path"]] = BlobEntry(
                            path=rec["path"],
                            size=rec["size"],
                            created_at=parse_rfc3339(rec["created_at"]),
                            version=rec["version"],
                            content_type=rec["content_type"],
                        )
            self._index[container] = index
            self._container_locks[container] = threading.Lock()
        # Clear abandoned temp files from a previous crash.
        for stale in self._tmp_dir.glob("*.part"):
            stale.unlink(missing_ok=True)
