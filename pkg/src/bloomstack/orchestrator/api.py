"""Orchestration HTTP surface: pipelines, runs, triggers, pool, dead letters."""

from __future__ import annotations

from fastapi import APIRouter, Request
from fastapi.responses import JSONResponse

from ..clock import parse_rfc3339
from ..events import EventBus
from ..pool import ComputePool
from ..triggers import TriggerEngine, TriggerError, TriggerSpec, UnknownTrigger
from .engine import MissingParameter, Orchestrator, RunNotFound, UnknownPipeline
from .model import PipelineDefinition, ValidationError


def _error(status: int, exc: Exception) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": type(exc).__name__, "detail": str(exc)},
    )


def create_orchestration_router(
    orch: Orchestrator,
    engine: TriggerEngine,
    pool: ComputePool,
    bus: EventBus,
) -> APIRouter:
    router = APIRouter()

    @router.post("/v1/pipelines")
    async def apply_pipeline(request: Request):
        body = await request.json()
        try:
            definition = PipelineDefinition.from_json(body)
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, ValidationError([f"malformed definition: {exc}"]))
        try:
            orch.apply_pipeline(definition)
        except ValidationError as exc:
            return JSONResponse(
                status_code=400,
                content={"error": "ValidationError", "violations": exc.violations},
            )
        return JSONResponse(status_code=201, content={"name": definition.name})

    @router.get("/v1/pipelines")
    async def list_pipelines():
        return orch.list_pipelines()

    @router.post("/v1/pipelines/{name}/runs")
    async def start_run(name: str, request: Request):
        body = await request.json() if await request.body() else {}
        parameters = body.get("parameters", {}) if isinstance(body, dict) else {}
        try:
            run_id = orch.start_run(name, parameters)
        except UnknownPipeline as exc:
            return _error(404, exc)
        except MissingParameter as exc:
            return _error(400, exc)
        return JSONResponse(status_code=202, content={"run_id": run_id})

    @router.get("/v1/runs/{run_id}")
    async def get_run(run_id: str):
        try:
            return orch.get_run(run_id).to_json()
        except RunNotFound as exc:
            return _error(404, exc)

    @router.get("/v1/runs")
    async def list_runs(
        pipeline: str | None = None,
        status: str | None = None,
        since: str | None = None,
        limit: int = 100,
    ):
        since_dt = parse_rfc3339(since) if since else None
        runs = orch.list_runs(pipeline=pipeline, status=status, since=since_dt, limit=limit)
        return {"runs": [r.to_json() for r in runs]}

    @router.post("/v1/triggers")
    async def apply_trigger(request: Request):
        body = await request.json()
        try:
            spec = TriggerSpec.from_json(body)
            engine.register_trigger(spec)
        except TriggerError as exc:
            status = 409 if type(exc).__name__ == "DuplicateName" else 400
            return _error(status, exc)
        return JSONResponse(status_code=201, content={"name": spec.name})

    @router.get("/v1/triggers")
    async def list_triggers():
        return engine.list_triggers()

    @router.post("/v1/triggers/{name}/enable")
    async def enable_trigger(name: str):
        try:
            engine.enable(name)
        except UnknownTrigger as exc:
            return _error(404, exc)
        return {"name": name, "enabled": True}

    @router.post("/v1/triggers/{name}/disable")
    async def disable_trigger(name: str):
        try:
            engine.disable(name)
        except UnknownTrigger as exc:
            return _error(404, exc)
        return {"name": name, "enabled": False}

    @router.get("/v1/pool")
    async def pool_state():
        return pool.state().to_json()

    @router.get("/v1/dead-letters")
    async def dead_letters():
        return [r.to_json() for r in bus.dead_letters()]

    return router
