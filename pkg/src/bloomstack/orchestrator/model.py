"""Pipeline definitions and run records.

A pipeline is a named, parameterized, strictly linear sequence of
activities (Copy, Process, Infer, Render). Location fields are
expressions over @param.* and literals, resolved once at run start.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Any

from ..clock import parse_rfc3339, rfc3339
from ..exprs import BadExpression, parse_expr

ACTIVITY_KINDS = ("Copy", "Process", "Infer", "Render")
PROCESS_OPS = ("compress", "slice", "validate_dims")

RUN_QUEUED = "Queued"
RUN_IN_PROGRESS = "InProgress"
RUN_SUCCEEDED = "Succeeded"
RUN_FAILED = "Failed"
TERMINAL_STATUSES = (RUN_SUCCEEDED, RUN_FAILED)

ACT_PENDING = "Pending"
ACT_IN_PROGRESS = "InProgress"
ACT_SUCCEEDED = "Succeeded"
ACT_FAILED = "Failed"
ACT_SKIPPED = "Skipped"

MAX_ACTIVITY_RETRIES = 3


class ValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: str | None = None


@dataclass(frozen=True)
class Activity:
    name: str
    kind: str
    config: dict[str, Any]
    retries: int = 0


@dataclass
class PipelineDefinition:
    name: str
    parameters: list[ParamSpec]
    activities: list[Activity]

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "PipelineDefinition":
        params = [
            ParamSpec(name=str(p["name"]), default=p.get("default"))
            for p in obj.get("parameters", [])
        ]
        activities = [
            Activity(
                name=str(a["name"]),
                kind=str(a["kind"]),
                config=dict(a.get("config", {})),
                retries=int(a.get("retries", 0)),
            )
            for a in obj.get("activities", [])
        ]
        return cls(name=str(obj["name"]), parameters=params, activities=activities)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "parameters": [
                {"name": p.name} if p.default is None else {"name": p.name, "default": p.default}
                for p in self.parameters
            ],
            "activities": [
                {"name": a.name, "kind": a.kind, "config": a.config, "retries": a.retries}
                for a in self.activities
            ],
        }

    def validate(self) -> list[str]:
        """Collect every violation; an empty list means the definition is usable."""
        violations: list[str] = []
        if not self.name:
            violations.append("pipeline name must be non-empty")
        if not self.activities:
            violations.append("pipeline must declare at least one activity")
        names = [a.name for a in self.activities]
        if len(names) != len(set(names)):
            violations.append("activity names must be unique")
        declared = {p.name for p in self.parameters}
        if len(declared) != len(self.parameters):
            violations.append("parameter names must be unique")
        infer_seen: set[str] = set()
        for act in self.activities:
            prefix = f"activity {act.name!r}"
            if act.kind not in ACTIVITY_KINDS:
                violations.append(f"{prefix}: unknown kind {act.kind!r}")
                continue
            if not 0 <= act.retries <= MAX_ACTIVITY_RETRIES:
                violations.append(f"{prefix}: retries must be 0..{MAX_ACTIVITY_RETRIES}")
            checker = _CONFIG_CHECKS[act.kind]
            violations.extend(
                f"{prefix}: {v}" for v in checker(act.config, declared, infer_seen)
            )
            if act.kind == "Infer":
                infer_seen.add(act.name)
        return violations


def _check_location(obj: Any, label: str, declared: set[str]) -> list[str]:
    if not isinstance(obj, dict):
        return [f"{label} must be an object with container_expr/path_expr"]
    out: list[str] = []
    for key in ("container_expr", "path_expr"):
        text = obj.get(key)
        if not isinstance(text, str) or not text:
            out.append(f"{label}.{key} missing")
            continue
        try:
            expr = parse_expr(text)
        except BadExpression as exc:
            out.append(f"{label}.{key}: {exc}")
            continue
        for ns, fld in expr.references():
            if ns != "param":
                out.append(f"{label}.{key}: only @param.* references are allowed")
            elif fld not in declared:
                out.append(f"{label}.{key}: undeclared parameter {fld!r}")
    return out


def _check_copy(config: dict, declared: set[str], _infer: set[str]) -> list[str]:
    out = _check_location(config.get("source"), "source", declared)
    out += _check_location(config.get("sink"), "sink", declared)
    return out


def _check_process(config: dict, declared: set[str], _infer: set[str]) -> list[str]:
    op = config.get("op")
    if op not in PROCESS_OPS:
        return [f"op must be one of {PROCESS_OPS}, got {op!r}"]
    params = config.get("params", {})
    if not isinstance(params, dict):
        return ["params must be an object"]
    out: list[str] = []
    if op == "compress":
        quality = params.get("quality", 30)
        if not isinstance(quality, int) or not 1 <= quality <= 100:
            out.append(f"compress quality must be an int in 1..100, got {quality!r}")
    elif op == "slice":
        k = params.get("k")
        if not isinstance(k, int) or k < 1:
            out.append(f"slice k must be an int >= 1, got {k!r}")
    elif op == "validate_dims":
        for key in ("width", "height"):
            v = params.get(key)
            if not isinstance(v, int) or v < 1:
                out.append(f"validate_dims {key} must be an int >= 1, got {v!r}")
    return out


def _check_infer(config: dict, declared: set[str], _infer: set[str]) -> list[str]:
    out: list[str] = []
    if not config.get("endpoint"):
        out.append("endpoint missing")
    if not config.get("auth_key_ref"):
        out.append("auth_key_ref (env var name) missing")
    timeout = config.get("timeout_ms", 10_000)
    if not isinstance(timeout, int) or timeout <= 0:
        out.append(f"timeout_ms must be a positive int, got {timeout!r}")
    if "sink" in config:
        out += _check_location(config.get("sink"), "sink", declared)
    return out


def _check_render(config: dict, declared: set[str], infer_seen: set[str]) -> list[str]:
    out: list[str] = []
    source = config.get("detections_from")
    if not source:
        out.append("detections_from missing")
    elif source not in infer_seen:
        out.append(f"detections_from must name an earlier Infer activity, got {source!r}")
    out += _check_location(config.get("sink"), "sink", declared)
    return out


_CONFIG_CHECKS = {
    "Copy": _check_copy,
    "Process": _check_process,
    "Infer": _check_infer,
    "Render": _check_render,
}


@dataclass
class ActivityRecord:
    name: str
    status: str = ACT_PENDING
    started_at: datetime | None = None
    ended_at: datetime | None = None
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status,
            "started_at": rfc3339(self.started_at) if self.started_at else None,
            "ended_at": rfc3339(self.ended_at) if self.ended_at else None,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ActivityRecord":
        return cls(
            name=obj["name"],
            status=obj["status"],
            started_at=parse_rfc3339(obj["started_at"]) if obj.get("started_at") else None,
            ended_at=parse_rfc3339(obj["ended_at"]) if obj.get("ended_at") else None,
            error=obj.get("error"),
        )


@dataclass
class PipelineRun:
    run_id: str
    pipeline: str
    trigger_source: dict[str, str]
    parameters: dict[str, str]
    status: str
    activities: list[ActivityRecord]
    created_at: datetime
    ended_at: datetime | None = None
    error: str | None = None

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES

    def to_json(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "pipeline": self.pipeline,
            "trigger_source": dict(self.trigger_source),
            "parameters": dict(self.parameters),
            "status": self.status,
            "activities": [a.to_json() for a in self.activities],
            "created_at": rfc3339(self.created_at),
            "ended_at": rfc3339(self.ended_at) if self.ended_at else None,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "PipelineRun":
        return cls(
            run_id=obj["run_id"],
            pipeline=obj["pipeline"],
            trigger_source=dict(obj.get("trigger_source", {})),
            parameters=dict(obj.get("parameters", {})),
            status=obj["status"],
            activities=[ActivityRecord.from_json(a) for a in obj.get("activities", [])],
            created_at=parse_rfc3339(obj["created_at"]),
            ended_at=parse_rfc3339(obj["ended_at"]) if obj.get("ended_at") else None,
            error=obj.get("error"),
        )
