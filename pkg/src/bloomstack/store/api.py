"""HTTP surface of the blob store.

Routes:
  PUT    /v1/containers/{container}/blobs/{path}   raw body -> 201
  GET    /v1/containers/{container}/blobs/{path}   -> 200 raw body
  GET    /v1/containers/{container}/blobs?prefix=  -> 200 JSON array
  DELETE /v1/containers/{container}/blobs/{path}   -> 204
  POST   /v1/containers {"name": ...}              -> 201

GET/POST /v1/stats expose an in-flight request gauge used by the
ingestion benchmark; `latency_s` injects a per-request delay on the
container routes (test mode) so client concurrency is measurable.
"""

from __future__ import annotations

import asyncio
import threading

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from ..clock import rfc3339
from .core import (
    AlreadyExists,
    BlobStore,
    BlobTooLarge,
    InvalidName,
    InvalidPath,
    NotFound,
    UnknownContainer,
)


class _Stats:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.inflight = 0
        self.max_inflight = 0
        self.requests = 0

    def enter(self) -> None:
        with self._lock:
            self.inflight += 1
            self.requests += 1
            self.max_inflight = max(self.max_inflight, self.inflight)

    def exit(self) -> None:
        with self._lock:
            self.inflight -= 1

    def reset(self) -> None:
        with self._lock:
            self.inflight = 0
            self.max_inflight = 0
            self.requests = 0

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "inflight": self.inflight,
                "max_inflight": self.max_inflight,
                "requests": self.requests,
            }


def _error(status: int, exc: Exception) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": type(exc).__name__, "detail": str(exc)},
    )


def create_store_app(store: BlobStore, latency_s: float = 0.0) -> FastAPI:
    app = FastAPI(docs_url=None, redoc_url=None, openapi_url=None)
    stats = _Stats()
    app.state.store = store
    app.state.stats = stats
    app.state.latency_s = latency_s

    @app.middleware("http")
    async def _track(request: Request, call_next):
        if not request.url.path.startswith("/v1/containers"):
            return await call_next(request)
        stats.enter()
        try:
            if app.state.latency_s > 0:
                await asyncio.sleep(app.state.latency_s)
            return await call_next(request)
        finally:
            stats.exit()

    @app.post("/v1/containers")
    async def create_container(request: Request):
        body = await request.json()
        name = body.get("name") if isinstance(body, dict) else None
        try:
            store.create_container(name)
        except AlreadyExists as exc:
            return _error(409, exc)
        except InvalidName as exc:
            return _error(400, exc)
        return JSONResponse(status_code=201, content={"name": name})

    @app.get("/v1/containers/{container}/blobs")
    async def list_blobs(container: str, prefix: str = ""):
        try:
            entries = store.list_blobs(container, prefix)
        except UnknownContainer as exc:
            return _error(404, exc)
        return [
            {"path": e.path, "size": e.size, "created_at": rfc3339(e.created_at)}
            for e in entries
        ]

    @app.put("/v1/containers/{container}/blobs/{path:path}")
    async def put_blob(container: str, path: str, request: Request):
        data = await request.body()
        content_type = request.headers.get("content-type", "application/octet-stream")
        try:
            blob = store.put_blob(container, path, data, content_type)
        except UnknownContainer as exc:
            return _error(404, exc)
        except InvalidPath as exc:
            return _error(400, exc)
        except BlobTooLarge as exc:
            return _error(413, exc)
        return JSONResponse(
            status_code=201,
            content={
                "container": blob.container,
                "path": blob.path,
                "size": blob.size,
                "version": blob.version,
            },
        )

    @app.get("/v1/containers/{container}/blobs/{path:path}")
    async def get_blob(container: str, path: str):
        try:
            blob = store.get_blob(container, path)
        except (UnknownContainer, NotFound) as exc:
            return _error(404, exc)
        except InvalidPath as exc:
            return _error(400, exc)
        return Response(content=blob.data, media_type=blob.content_type)

    @app.delete("/v1/containers/{container}/blobs/{path:path}")
    async def delete_blob(container: str, path: str):
        try:
            store.delete_blob(container, path)
        except (UnknownContainer, NotFound) as exc:
            return _error(404, exc)
        except InvalidPath as exc:
            return _error(400, exc)
        return Response(status_code=204)

    @app.get("/v1/stats")
    async def get_stats():
        snap = stats.snapshot()
        snap["latency_ms"] = app.state.latency_s * 1000.0
        return snap

    @app.post("/v1/stats/reset")
    async def reset_stats():
        stats.reset()
        return {"ok": True}

    return app
