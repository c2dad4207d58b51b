"""Authenticated scoring service.

POST /v1/score takes raw image bytes plus a Bearer key and an
X-Filename hint, and returns the canonical detection document. The key
comparison is constant-time with respect to key content, keys are never
logged, and every route except /v1/health requires a valid key.
Responses are serialized once into canonical bytes so identical
requests produce byte-identical JSON.
"""

from __future__ import annotations

import hmac
import json
import logging
import os
import uuid

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from ..boxes import detections_to_json
from ..imaging import DecodeError, decode_image
from .backends import DetectorBackend, MockBackend, ThresholdBackend

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY_BYTES = 16 * 1024 * 1024


def create_detector_app(
    backend: DetectorBackend,
    keys: list[str],
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
) -> FastAPI:
    keys = [k for k in keys if k]
    if not keys:
        raise ValueError("the detector needs at least one non-empty auth key")

    app = FastAPI(docs_url=None, redoc_url=None, openapi_url=None)
    app.state.backend = backend

    def authorized(request: Request) -> bool:
        header = request.headers.get("authorization", "")
        scheme, _, candidate = header.partition(" ")
        if scheme.lower() != "bearer" or not candidate:
            return False
        # compare_digest keeps the comparison constant-time per key.
        matched = False
        for key in keys:
            if hmac.compare_digest(candidate.encode(), key.encode()):
                matched = True
        return matched

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "backend": backend.name}

    @app.post("/v1/score")
    async def score(request: Request):
        if not authorized(request):
            return JSONResponse(status_code=401, content={"error": "unauthorized"})
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > max_body_bytes:
            return JSONResponse(status_code=413, content={"error": "body too large"})
        body = await request.body()
        if len(body) > max_body_bytes:
            return JSONResponse(status_code=413, content={"error": "body too large"})
        filename = request.headers.get("x-filename", "")
        try:
            image = decode_image(body)
        except DecodeError as exc:
            return JSONResponse(status_code=422, content={"error": f"undecodable image: {exc}"})
        try:
            detections = backend.detect(image, filename)
            payload = json.dumps(
                detections_to_json(filename, detections), separators=(",", ":")
            ).encode()
        except Exception:
            error_id = uuid.uuid4().hex
            logger.exception("backend failure, error_id=%s", error_id)
            return JSONResponse(status_code=500, content={"error_id": error_id})
        return Response(content=payload, media_type="application/json")

    return app


def create_detector_app_from_env() -> FastAPI:
    """Build the app from DETECTOR_KEYS / DETECTOR_BACKEND / DETECTOR_FIXTURES."""
    keys = [k.strip() for k in os.environ.get("DETECTOR_KEYS", "").split(",") if k.strip()]
    backend_name = os.environ.get("DETECTOR_BACKEND", "threshold")
    if backend_name == "mock":
        fixtures = os.environ.get("DETECTOR_FIXTURES")
        if not fixtures:
            raise ValueError("DETECTOR_BACKEND=mock requires DETECTOR_FIXTURES")
        backend: DetectorBackend = MockBackend.from_file(fixtures)
    elif backend_name == "threshold":
        backend = ThresholdBackend()
    else:
        raise ValueError(f"unknown DETECTOR_BACKEND: {backend_name!r}")
    return create_detector_app(backend, keys)
