"""Run execution engine.

Runs execute concurrently up to max_concurrent_runs; within a run,
activities execute strictly in order and a failure skips everything
after it. Process and Render work is dispatched onto the compute pool;
Infer performs an authenticated HTTP request to the detector endpoint.
Every run transition is appended to a JSON-lines history log and
replayed on startup; runs that were in flight during a crash come back
as Failed with error "orphaned".
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

import httpx

from .. import imaging
from ..boxes import Detection, InvalidBox, detections_from_json
from ..clock import Clock, WallClock
from ..exprs import parse_expr
from ..pool import ComputePool, PoolStartTimeout, TaskPanicked
from ..store.core import BlobStore, NotFound, StoreError
from .model import (
    ACT_FAILED,
    ACT_IN_PROGRESS,
    ACT_SKIPPED,
    ACT_SUCCEEDED,
    RUN_FAILED,
    RUN_IN_PROGRESS,
    RUN_QUEUED,
    RUN_SUCCEEDED,
    Activity,
    ActivityRecord,
    PipelineDefinition,
    PipelineRun,
    ValidationError,
)

DEFAULT_MAX_CONCURRENT_RUNS = 8
DEFAULT_RUN_TIMEOUT_S = 120.0


class UnknownPipeline(Exception):
    pass


class MissingParameter(Exception):
    pass


class RunNotFound(Exception):
    pass


class ActivityFailure(Exception):
    """Internal: carries the per-activity error string for the record."""


@dataclass
class _RunContext:
    parameters: dict[str, str]
    working: tuple[str, str] | None = None  # (container, path) of current artifact
    detections: dict[str, list[Detection]] = field(default_factory=dict)


class RunHistory:
    """Append-only JSONL log; last line per run_id wins on replay."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, run_json: dict[str, Any]) -> None:
        line = json.dumps(run_json, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")

    def replay(self) -> dict[str, dict[str, Any]]:
        latest: dict[str, dict[str, Any]] = {}
        if not self.path.exists():
            return latest
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                latest[obj["run_id"]] = obj
        return latest


class Orchestrator:
    def __init__(
        self,
        store: BlobStore,
        pool: ComputePool,
        data_dir: str | Path,
        max_concurrent_runs: int = DEFAULT_MAX_CONCURRENT_RUNS,
        run_timeout_s: float = DEFAULT_RUN_TIMEOUT_S,
        clock: Clock | None = None,
    ):
        self._store = store
        self._pool = pool
        self._clock = clock or WallClock()
        self._run_timeout_s = run_timeout_s
        self._data_dir = Path(data_dir)
        self._data_dir.mkdir(parents=True, exist_ok=True)
        self._history = RunHistory(self._data_dir / "runs.jsonl")
        self._pipelines_path = self._data_dir / "pipelines.json"

        self._lock = threading.Condition()
        self._pipelines: dict[str, PipelineDefinition] = {}
        self._runs: dict[str, PipelineRun] = {}
        self._http = httpx.Client()
        self._executor = ThreadPoolExecutor(
            max_workers=max_concurrent_runs, thread_name_prefix="run"
        )
        self._load_pipelines()
        self._recover_runs()

    # -- pipelines ---------------------------------------------------------

    def apply_pipeline(self, definition: PipelineDefinition) -> None:
        """Upsert by name; in-flight runs keep the version they started with."""
        violations = definition.validate()
        if violations:
            raise ValidationError(violations)
        with self._lock:
            self._pipelines[definition.name] = definition
            self._persist_pipelines()

    def has_pipeline(self, name: str) -> bool:
        with self._lock:
            return name in self._pipelines

    def get_pipeline(self, name: str) -> PipelineDefinition:
        with self._lock:
            defn = self._pipelines.get(name)
        if defn is None:
            raise UnknownPipeline(name)
        return defn

    def list_pipelines(self) -> list[dict[str, Any]]:
        with self._lock:
            return [d.to_json() for d in self._pipelines.values()]

    # -- runs ----------------------------------------------------------------

    def start_run(
        self,
        pipeline: str,
        parameters: dict[str, str] | None = None,
        trigger_source: dict[str, str] | None = None,
    ) -> str:
        with self._lock:
            defn = self._pipelines.get(pipeline)
        if defn is None:
            raise UnknownPipeline(pipeline)
        params = dict(parameters or {})
        for spec in defn.parameters:
            if spec.name not in params:
                if spec.default is None:
                    raise MissingParameter(spec.name)
                params[spec.name] = spec.default
        resolved = _resolve_activities(defn, params)
        run = PipelineRun(
            run_id=f"run-{uuid.uuid4().hex[:12]}",
            pipeline=pipeline,
            trigger_source=trigger_source or {"trigger": "manual", "kind": "Manual"},
            parameters=params,
            status=RUN_QUEUED,
            activities=[ActivityRecord(name=a.name) for a in defn.activities],
            created_at=self._clock.now_utc(),
        )
        with self._lock:
            self._runs[run.run_id] = run
            self._history.append(run.to_json())
        self._executor.submit(self._execute, run, defn, resolved)
        return run.run_id

    def get_run(self, run_id: str) -> PipelineRun:
        with self._lock:
            run = self._runs.get(run_id)
            if run is None:
                raise RunNotFound(run_id)
            return PipelineRun.from_json(run.to_json())

    def list_runs(
        self,
        pipeline: str | None = None,
        status: str | None = None,
        since: datetime | None = None,
        limit: int | None = None,
    ) -> list[PipelineRun]:
        with self._lock:
            snaps = [PipelineRun.from_json(r.to_json()) for r in self._runs.values()]
        if pipeline is not None:
            snaps = [r for r in snaps if r.pipeline == pipeline]
        if status is not None:
            snaps = [r for r in snaps if r.status == status]
        if since is not None:
            snaps = [r for r in snaps if r.created_at >= since]
        snaps.sort(key=lambda r: (r.created_at, r.run_id), reverse=True)
        return snaps[:limit] if limit else snaps

    def wait_run(self, run_id: str, timeout: float = 30.0) -> PipelineRun:
        import time as _time

        deadline = _time.monotonic() + timeout
        with self._lock:
            while True:
                run = self._runs.get(run_id)
                if run is None:
                    raise RunNotFound(run_id)
                if run.terminal:
                    return PipelineRun.from_json(run.to_json())
                remaining = deadline - _time.monotonic()
                if remaining <= 0:
                    raise TimeoutError(f"run {run_id} still {run.status}")
                self._lock.wait(timeout=min(remaining, 0.25))

    def wait_all(self, timeout: float = 60.0) -> bool:
        import time as _time

        deadline = _time.monotonic() + timeout
        with self._lock:
            while any(not r.terminal for r in self._runs.values()):
                remaining = deadline - _time.monotonic()
                if remaining <= 0:
                    return False
                self._lock.wait(timeout=min(remaining, 0.25))
        return True

    def close(self, wait: bool = True) -> None:
        self._executor.shutdown(wait=wait)
        self._http.close()

    # -- execution -----------------------------------------------------------

    def _execute(
        self,
        run: PipelineRun,
        defn: PipelineDefinition,
        resolved: dict[str, dict[str, Any]],
    ) -> None:
        with self._lock:
            run.status = RUN_IN_PROGRESS
            self._history.append(run.to_json())
            self._lock.notify_all()
        deadline = self._clock.now() + self._run_timeout_s
        ctx = _RunContext(parameters=run.parameters)
        failed_at: int | None = None
        for i, act in enumerate(defn.activities):
            record = run.activities[i]
            with self._lock:
                record.status = ACT_IN_PROGRESS
                record.started_at = self._clock.now_utc()
            try:
                self._dispatch_with_retries(act, resolved[act.name], ctx, deadline)
            except ActivityFailure as failure:
                with self._lock:
                    record.status = ACT_FAILED
                    record.ended_at = self._clock.now_utc()
                    record.error = str(failure)
                failed_at = i
                break
            else:
                with self._lock:
                    record.status = ACT_SUCCEEDED
                    record.ended_at = self._clock.now_utc()
        with self._lock:
            if failed_at is None:
                run.status = RUN_SUCCEEDED
            else:
                run.status = RUN_FAILED
                run.error = run.activities[failed_at].error
                for record in run.activities[failed_at + 1 :]:
                    record.status = ACT_SKIPPED
            run.ended_at = self._clock.now_utc()
            self._history.append(run.to_json())
            self._lock.notify_all()

    def _dispatch_with_retries(
        self,
        act: Activity,
        resolved: dict[str, Any],
        ctx: _RunContext,
        deadline: float,
    ) -> None:
        attempts = 0
        while True:
            try:
                self._dispatch(act, resolved, ctx, deadline)
                return
            except ActivityFailure:
                attempts += 1
                if attempts > act.retries:
                    raise
            except Exception as exc:  # defensive: never leave a run non-terminal
                attempts += 1
                if attempts > act.retries:
                    raise ActivityFailure(f"{act.kind}Error: unexpected: {exc}") from exc

    def _remaining(self, act: Activity, deadline: float) -> float:
        remaining = deadline - self._clock.now()
        if remaining <= 0:
            raise ActivityFailure(f"{act.kind}Error: run timeout exceeded")
        return remaining

    def _dispatch(
        self, act: Activity, resolved: dict[str, Any], ctx: _RunContext, deadline: float
    ) -> None:
        if act.kind == "Copy":
            self._do_copy(act, resolved, ctx)
        elif act.kind == "Process":
            self._do_process(act, resolved, ctx, deadline)
        elif act.kind == "Infer":
            self._do_infer(act, resolved, ctx, deadline)
        elif act.kind == "Render":
            self._do_render(act, resolved, ctx, deadline)
        else:  # unreachable past validation
            raise ActivityFailure(f"{act.kind}Error: unknown activity kind")

    def _do_copy(self, act: Activity, resolved: dict[str, Any], ctx: _RunContext) -> None:
        src = resolved["source"]
        sink = resolved["sink"]
        try:
            blob = self._store.get_blob(src["container"], src["path"])
            self._store.put_blob(sink["container"], sink["path"], blob.data, blob.content_type)
        except NotFound as exc:
            raise ActivityFailure(f"CopyError: source not found: {exc}") from exc
        except StoreError as exc:
            raise ActivityFailure(f"CopyError: {exc}") from exc
        ctx.working = (sink["container"], sink["path"])

    def _require_working(self, act: Activity, ctx: _RunContext) -> tuple[str, str]:
        if ctx.working is None:
            raise ActivityFailure(
                f"{act.kind}Error: no working artifact; a Copy activity must run first"
            )
        return ctx.working

    def _pool_call(self, act: Activity, fn, deadline: float) -> Any:
        remaining = self._remaining(act, deadline)
        try:
            handle = self._pool.submit(fn)
            return handle.result(timeout=remaining)
        except PoolStartTimeout as exc:
            raise ActivityFailure(f"PoolStartTimeout: {exc}") from exc
        except TaskPanicked as exc:
            raise ActivityFailure(f"{act.kind}Error: {exc}") from exc
        except TimeoutError as exc:
            raise ActivityFailure(f"{act.kind}Error: timed out: {exc}") from exc

    def _do_process(
        self, act: Activity, resolved: dict[str, Any], ctx: _RunContext, deadline: float
    ) -> None:
        container, path = self._require_working(act, ctx)
        op = resolved["op"]
        params = resolved["params"]

        def task() -> None:
            blob = self._store.get_blob(container, path)
            if op == "compress":
                out = imaging.compress_jpeg(blob.data, params.get("quality", 30))
                self._store.put_blob(container, path, out, "image/jpeg")
            elif op == "slice":
                image = imaging.decode_image(blob.data)
                pieces = imaging.slice_vertical(image, params["k"])
                for i, piece in enumerate(pieces):
                    self._store.put_blob(
                        container, f"{path}.s{i}.jpg", imaging.encode_jpeg(piece), "image/jpeg"
                    )
            elif op == "validate_dims":
                image = imaging.decode_image(blob.data)
                check = imaging.validate_dims(image, params["width"], params["height"])
                if not check.ok:
                    raise ValueError(
                        f"dimensions {check.actual_w}x{check.actual_h} != "
                        f"expected {check.expected_w}x{check.expected_h}"
                    )

        self._pool_call(act, task, deadline)

    def _do_infer(
        self, act: Activity, resolved: dict[str, Any], ctx: _RunContext, deadline: float
    ) -> None:
        container, path = self._require_working(act, ctx)
        remaining = self._remaining(act, deadline)
        try:
            blob = self._store.get_blob(container, path)
        except StoreError as exc:
            raise ActivityFailure(f"InferError: {exc}") from exc
        key = os.environ.get(resolved["auth_key_ref"], "")
        timeout = min(resolved["timeout_ms"] / 1000.0, remaining)
        try:
            response = self._http.post(
                resolved["endpoint"],
                content=blob.data,
                headers={
                    "Authorization": f"Bearer {key}",
                    "X-Filename": path,
                    "Content-Type": blob.content_type,
                },
                timeout=timeout,
            )
        except httpx.HTTPError as exc:
            raise ActivityFailure(f"InferError: request failed: {exc}") from exc
        if response.status_code != 200:
            raise ActivityFailure(f"InferError({response.status_code})")
        try:
            _, detections = detections_from_json(response.json())
        except (InvalidBox, json.JSONDecodeError, ValueError) as exc:
            raise ActivityFailure(f"InferError: bad response body: {exc}") from exc
        ctx.detections[act.name] = detections
        sink = resolved.get("sink")
        if sink is not None:
            # The response body is already the canonical detection document.
            try:
                self._store.put_blob(
                    sink["container"], sink["path"], response.content, "application/json"
                )
            except StoreError as exc:
                raise ActivityFailure(f"InferError: sink write failed: {exc}") from exc

    def _do_render(
        self, act: Activity, resolved: dict[str, Any], ctx: _RunContext, deadline: float
    ) -> None:
        container, path = self._require_working(act, ctx)
        detections = ctx.detections.get(resolved["detections_from"])
        if detections is None:
            raise ActivityFailure(
                f"RenderError: no detections recorded by {resolved['detections_from']!r}"
            )
        sink = resolved["sink"]

        def task() -> None:
            blob = self._store.get_blob(container, path)
            image = imaging.decode_image(blob.data)
            annotated = imaging.render_boxes(image, detections)
            self._store.put_blob(
                sink["container"], sink["path"], imaging.encode_jpeg(annotated), "image/jpeg"
            )

        self._pool_call(act, task, deadline)
        ctx.working = (sink["container"], sink["path"])

    # -- persistence ---------------------------------------------------------

    def _persist_pipelines(self) -> None:
        payload = {"pipelines": [d.to_json() for d in self._pipelines.values()]}
        tmp = self._pipelines_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2))
        tmp.replace(self._pipelines_path)

    def _load_pipelines(self) -> None:
        if not self._pipelines_path.exists():
            return
        payload = json.loads(self._pipelines_path.read_text())
        for obj in payload.get("pipelines", []):
            defn = PipelineDefinition.from_json(obj)
            self._pipelines[defn.name] = defn

    def _recover_runs(self) -> None:
        orphans = []
        for run_json in self._history.replay().values():
            run = PipelineRun.from_json(run_json)
            if not run.terminal:
                run.status = RUN_FAILED
                run.error = "orphaned"
                run.ended_at = self._clock.now_utc()
                for record in run.activities:
                    if record.status == ACT_IN_PROGRESS:
                        record.status = ACT_FAILED
                        record.error = "orphaned"
                        record.ended_at = run.ended_at
                    elif record.status not in (ACT_SUCCEEDED, ACT_FAILED):
                        record.status = ACT_SKIPPED
                orphans.append(run)
            self._runs[run.run_id] = run
        for run in orphans:
            self._history.append(run.to_json())


def _resolve_activities(
    defn: PipelineDefinition, params: dict[str, str]
) -> dict[str, dict[str, Any]]:
    """Evaluate every activity expression once, at run start."""
    context = {"param": params}

    def location(obj: dict[str, str]) -> dict[str, str]:
        return {
            "container": parse_expr(obj["container_expr"]).evaluate(context),
            "path": parse_expr(obj["path_expr"]).evaluate(context),
        }

    resolved: dict[str, dict[str, Any]] = {}
    for act in defn.activities:
        cfg = act.config
        if act.kind == "Copy":
            resolved[act.name] = {
                "source": location(cfg["source"]),
                "sink": location(cfg["sink"]),
            }
        elif act.kind == "Process":
            resolved[act.name] = {"op": cfg["op"], "params": dict(cfg.get("params", {}))}
        elif act.kind == "Infer":
            entry: dict[str, Any] = {
                "endpoint": cfg["endpoint"],
                "auth_key_ref": cfg["auth_key_ref"],
                "timeout_ms": cfg.get("timeout_ms", 10_000),
            }
            if "sink" in cfg:
                entry["sink"] = location(cfg["sink"])
            resolved[act.name] = entry
        elif act.kind == "Render":
            resolved[act.name] = {
                "detections_from": cfg["detections_from"],
                "sink": location(cfg["sink"]),
            }
    return resolved
