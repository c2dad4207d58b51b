"""HTTP clients for the store and orchestrator, plus ingestion tooling.

Sync ingestion issues one PUT at a time in filename order. Async
ingestion keeps at most `concurrency` PUTs in flight with no ordering
guarantee. The benchmark runs both modes over the same files against a
cleaned container; pointing it at a store with injected per-request
latency makes the concurrency win measurable and reproducible without
external tooling.
"""

from __future__ import annotations

import asyncio
import math
import mimetypes
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx

from .store.core import UnknownContainer


class StoreUnreachable(Exception):
    pass


class ClientError(Exception):
    """Non-2xx response outside the per-file ingest bookkeeping."""


def _raise_for(resp: httpx.Response) -> None:
    if resp.status_code >= 400:
        raise ClientError(f"{resp.request.method} {resp.request.url}: {resp.status_code} {resp.text}")


class StoreClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def create_container(self, name: str) -> None:
        _raise_for(self._http.post("/v1/containers", json={"name": name}))

    def put_blob(self, container: str, path: str, data: bytes, content_type: str) -> dict:
        resp = self._http.put(
            f"/v1/containers/{container}/blobs/{path}",
            content=data,
            headers={"Content-Type": content_type},
        )
        _raise_for(resp)
        return resp.json()

    def get_blob(self, container: str, path: str) -> tuple[bytes, str]:
        resp = self._http.get(f"/v1/containers/{container}/blobs/{path}")
        _raise_for(resp)
        return resp.content, resp.headers.get("content-type", "")

    def list_blobs(self, container: str, prefix: str = "") -> list[dict]:
        resp = self._http.get(
            f"/v1/containers/{container}/blobs", params={"prefix": prefix}
        )
        if resp.status_code == 404:
            raise UnknownContainer(container)
        _raise_for(resp)
        return resp.json()

    def delete_blob(self, container: str, path: str) -> None:
        _raise_for(self._http.delete(f"/v1/containers/{container}/blobs/{path}"))

    def stats(self) -> dict:
        resp = self._http.get("/v1/stats")
        _raise_for(resp)
        return resp.json()

    def reset_stats(self) -> None:
        _raise_for(self._http.post("/v1/stats/reset"))


class OrchClient:
    def __init__(self, base_url: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def apply_pipeline(self, definition: dict) -> dict:
        resp = self._http.post("/v1/pipelines", json=definition)
        _raise_for(resp)
        return resp.json()

    def list_pipelines(self) -> list[dict]:
        resp = self._http.get("/v1/pipelines")
        _raise_for(resp)
        return resp.json()

    def start_run(self, pipeline: str, parameters: dict[str, str]) -> str:
        resp = self._http.post(
            f"/v1/pipelines/{pipeline}/runs", json={"parameters": parameters}
        )
        _raise_for(resp)
        return resp.json()["run_id"]

    def get_run(self, run_id: str) -> dict:
        resp = self._http.get(f"/v1/runs/{run_id}")
        _raise_for(resp)
        return resp.json()

    def list_runs(self, **filters: Any) -> list[dict]:
        params = {k: v for k, v in filters.items() if v is not None}
        resp = self._http.get("/v1/runs", params=params)
        _raise_for(resp)
        return resp.json()["runs"]

    def apply_trigger(self, spec: dict) -> dict:
        resp = self._http.post("/v1/triggers", json=spec)
        _raise_for(resp)
        return resp.json()

    def list_triggers(self) -> list[dict]:
        resp = self._http.get("/v1/triggers")
        _raise_for(resp)
        return resp.json()

    def set_trigger_enabled(self, name: str, enabled: bool) -> None:
        action = "enable" if enabled else "disable"
        _raise_for(self._http.post(f"/v1/triggers/{name}/{action}"))

    def pool_state(self) -> dict:
        resp = self._http.get("/v1/pool")
        _raise_for(resp)
        return resp.json()

    def dead_letters(self) -> list[dict]:
        resp = self._http.get("/v1/dead-letters")
        _raise_for(resp)
        return resp.json()


# -- ingestion ---------------------------------------------------------------


@dataclass
class IngestPlan:
    mode: str  # "sync" | "async"
    source_dir: Path
    container: str
    prefix: str = ""
    concurrency: int = 64

    def __post_init__(self) -> None:
        self.source_dir = Path(self.source_dir)
        if self.mode not in ("sync", "async"):
            raise ValueError(f"mode must be sync or async, got {self.mode!r}")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


@dataclass(frozen=True)
class FileResult:
    rel_path: str
    target_path: str
    ok: bool
    status_code: int | None = None
    error: str | None = None


@dataclass
class IngestSummary:
    mode: str
    file_count: int
    succeeded: int
    failed: int
    total_bytes: int
    wall_s: float
    results: list[FileResult] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "file_count": self.file_count,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "total_bytes": self.total_bytes,
            "wall_s": self.wall_s,
        }


def _collect_files(source_dir: Path) -> list[tuple[Path, str]]:
    if not source_dir.is_dir():
        raise ValueError(f"source_dir does not exist: {source_dir}")
    files = sorted(
        (p, p.relative_to(source_dir).as_posix())
        for p in source_dir.rglob("*")
        if p.is_file()
    )
    if not files:
        raise ValueError(f"source_dir contains no files: {source_dir}")
    return files


def content_type_for(path: Path) -> str:
    guessed, _ = mimetypes.guess_type(path.name)
    return guessed or "application/octet-stream"


def _probe_container(store_url: str, container: str) -> None:
    try:
        resp = httpx.get(
            f"{store_url.rstrip('/')}/v1/containers/{container}/blobs",
            params={"prefix": ""},
            timeout=10.0,
        )
    except httpx.HTTPError as exc:
        raise StoreUnreachable(f"{store_url}: {exc}") from exc
    if resp.status_code == 404:
        raise UnknownContainer(container)
    _raise_for(resp)


def ingest(plan: IngestPlan, store_url: str) -> IngestSummary:
    files = _collect_files(plan.source_dir)
    _probe_container(store_url, plan.container)
    total_bytes = sum(p.stat().st_size for p, _ in files)
    start = time.monotonic()
    if plan.mode == "sync":
        results = _ingest_sync(plan, store_url, files)
    else:
        results = asyncio.run(_ingest_async(plan, store_url, files))
    wall = time.monotonic() - start
    succeeded = sum(1 for r in results if r.ok)
    return IngestSummary(
        mode=plan.mode,
        file_count=len(files),
        succeeded=succeeded,
        failed=len(files) - succeeded,
        total_bytes=total_bytes,
        wall_s=wall,
        results=results,
    )


def _target(plan: IngestPlan, rel: str) -> str:
    return f"{plan.prefix}{rel}"


def _ingest_sync(
    plan: IngestPlan, store_url: str, files: list[tuple[Path, str]]
) -> list[FileResult]:
    results = []
    with httpx.Client(base_url=store_url.rstrip("/"), timeout=60.0) as client:
        for path, rel in files:
            target = _target(plan, rel)
            try:
                resp = client.put(
                    f"/v1/containers/{plan.container}/blobs/{target}",
                    content=path.read_bytes(),
                    headers={"Content-Type": content_type_for(path)},
                )
                results.append(
                    FileResult(rel, target, resp.status_code == 201, resp.status_code)
                )
            except httpx.HTTPError as exc:
                results.append(FileResult(rel, target, False, None, str(exc)))
    return results


async def _ingest_async(
    plan: IngestPlan, store_url: str, files: list[tuple[Path, str]]
) -> list[FileResult]:
    gate = asyncio.Semaphore(plan.concurrency)
    limits = httpx.Limits(
        max_connections=plan.concurrency, max_keepalive_connections=plan.concurrency
    )

    async def upload(client: httpx.AsyncClient, path: Path, rel: str) -> FileResult:
        target = _target(plan, rel)
        async with gate:
            try:
                resp = await client.put(
                    f"/v1/containers/{plan.container}/blobs/{target}",
                    content=path.read_bytes(),
                    headers={"Content-Type": content_type_for(path)},
                )
                return FileResult(rel, target, resp.status_code == 201, resp.status_code)
            except httpx.HTTPError as exc:
                return FileResult(rel, target, False, None, str(exc))

    async with httpx.AsyncClient(
        base_url=store_url.rstrip("/"), timeout=60.0, limits=limits
    ) as client:
        return list(await asyncio.gather(*(upload(client, p, r) for p, r in files)))


# -- benchmark ---------------------------------------------------------------


@dataclass
class BenchReport:
    file_count: int
    total_bytes: int
    sync_wall_s: float
    async_wall_s: float
    speedup: float
    concurrency: int
    latency_ms: float
    max_inflight: int
    expected_sync_floor_s: float
    expected_async_ceiling_s: float

    def to_json(self) -> dict:
        return {
            "file_count": self.file_count,
            "total_bytes": self.total_bytes,
            "sync": {
                "wall_s": self.sync_wall_s,
                "files_per_s": self.file_count / self.sync_wall_s,
                "bytes_per_s": self.total_bytes / self.sync_wall_s,
            },
            "async": {
                "wall_s": self.async_wall_s,
                "files_per_s": self.file_count / self.async_wall_s,
                "bytes_per_s": self.total_bytes / self.async_wall_s,
            },
            "speedup": self.speedup,
            "concurrency": self.concurrency,
            "latency_ms": self.latency_ms,
            "max_inflight": self.max_inflight,
            "expected_sync_floor_s": self.expected_sync_floor_s,
            "expected_async_ceiling_s": self.expected_async_ceiling_s,
        }


def _clean_container(client: StoreClient, container: str) -> None:
    for entry in client.list_blobs(container):
        client.delete_blob(container, entry["path"])


def bench_ingest(
    store_url: str,
    source_dir: str | Path,
    container: str,
    concurrency: int,
    simulated_latency_ms: float,
) -> BenchReport:
    """Run sync then async ingestion over the same files; report the ratio."""
    files = _collect_files(Path(source_dir))
    n = len(files)
    client = StoreClient(store_url)
    try:
        _clean_container(client, container)
        client.reset_stats()
        sync_summary = ingest(
            IngestPlan(mode="sync", source_dir=Path(source_dir), container=container),
            store_url,
        )
        _clean_container(client, container)
        client.reset_stats()
        async_summary = ingest(
            IngestPlan(
                mode="async",
                source_dir=Path(source_dir),
                container=container,
                concurrency=concurrency,
            ),
            store_url,
        )
        stats = client.stats()
    finally:
        client.close()
    latency_s = simulated_latency_ms / 1000.0
    return BenchReport(
        file_count=n,
        total_bytes=sync_summary.total_bytes,
        sync_wall_s=sync_summary.wall_s,
        async_wall_s=async_summary.wall_s,
        speedup=sync_summary.wall_s / async_summary.wall_s,
        concurrency=concurrency,
        latency_ms=simulated_latency_ms,
        max_inflight=stats.get("max_inflight", 0),
        expected_sync_floor_s=n * latency_s,
        expected_async_ceiling_s=math.ceil(n / concurrency) * latency_s * 2,
    )
