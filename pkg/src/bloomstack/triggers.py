"""Event and CRON schedule triggers binding context to pipeline runs.

Event triggers are wired into the event bus (one subscription per
trigger, built from the spec's event_filter). Schedule triggers fire on
cron ticks; fires missed while the engine was not ticking are skipped,
not replayed. A schedule trigger may carry a `scan` section naming a
container: each fire then starts one run per blob that appeared since
the previous fire (the batch layer), with the blob exposed to bindings
as @scan.container / @scan.path. Without `scan` a fire starts exactly
one run.

Binding context fields by trigger kind:
  Event:            @event.container, @event.path
  Schedule:         @schedule.fire_time (RFC 3339)
  Schedule w/ scan: @schedule.fire_time, @scan.container, @scan.path
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Protocol

from .clock import Clock, WallClock, rfc3339
from .cron import CronExpr, next_fire, parse_cron
from .events import EventBus, SubscriptionFilter
from .exprs import BadExpression, Expr, ExpressionEvaluationError, parse_expr
from .store.core import BlobEntry, BlobEvent

logger = logging.getLogger(__name__)

EVENT_CONTEXT = {("event", "container"), ("event", "path")}
SCHEDULE_CONTEXT = {("schedule", "fire_time")}
SCAN_CONTEXT = SCHEDULE_CONTEXT | {("scan", "container"), ("scan", "path")}


class TriggerError(Exception):
    pass


class UnknownPipeline(TriggerError):
    pass


class UnknownTrigger(TriggerError):
    pass


class DuplicateName(TriggerError):
    pass


class BadBinding(TriggerError):
    pass


class InvalidTrigger(TriggerError):
    pass


class BindingEvaluationError(TriggerError):
    pass


class OrchestratorUnavailable(TriggerError):
    pass


class RunStarter(Protocol):
    def has_pipeline(self, name: str) -> bool: ...

    def start_run(
        self, pipeline: str, parameters: dict[str, str], trigger_source: dict[str, str]
    ) -> str: ...


class BlobLister(Protocol):
    def list_blobs(self, container: str, prefix: str = "") -> list[BlobEntry]: ...


@dataclass(frozen=True)
class ScanConfig:
    container: str
    path_prefix: str = ""
    path_suffix: str = ""


@dataclass(frozen=True)
class EventFilterConfig:
    container: str
    path_prefix: str = ""
    path_suffix: str = ""
    kinds: tuple[str, ...] = ("BlobCreated",)


@dataclass
class TriggerSpec:
    name: str
    kind: str  # "Event" | "Schedule"
    pipeline: str
    bindings: dict[str, str]
    cron: str | None = None
    enabled: bool = True
    event_filter: EventFilterConfig | None = None
    scan: ScanConfig | None = None

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "TriggerSpec":
        try:
            name = str(obj["name"])
            kind = str(obj["kind"])
            pipeline = str(obj["pipeline"])
            bindings = {str(k): str(v) for k, v in obj.get("bindings", {}).items()}
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidTrigger(f"malformed trigger spec: {exc}") from exc
        ef = obj.get("event_filter")
        scan = obj.get("scan")
        return cls(
            name=name,
            kind=kind,
            pipeline=pipeline,
            bindings=bindings,
            cron=obj.get("cron"),
            enabled=bool(obj.get("enabled", True)),
            event_filter=EventFilterConfig(
                container=str(ef["container"]),
                path_prefix=str(ef.get("path_prefix", "")),
                path_suffix=str(ef.get("path_suffix", "")),
                kinds=tuple(ef.get("kinds", ["BlobCreated"])),
            )
            if ef
            else None,
            scan=ScanConfig(
                container=str(scan["container"]),
                path_prefix=str(scan.get("path_prefix", "")),
                path_suffix=str(scan.get("path_suffix", "")),
            )
            if scan
            else None,
        )

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "kind": self.kind,
            "pipeline": self.pipeline,
            "bindings": dict(self.bindings),
            "enabled": self.enabled,
        }
        if self.cron is not None:
            out["cron"] = self.cron
        if self.event_filter is not None:
            out["event_filter"] = {
                "container": self.event_filter.container,
                "path_prefix": self.event_filter.path_prefix,
                "path_suffix": self.event_filter.path_suffix,
                "kinds": list(self.event_filter.kinds),
            }
        if self.scan is not None:
            out["scan"] = {
                "container": self.scan.container,
                "path_prefix": self.scan.path_prefix,
                "path_suffix": self.scan.path_suffix,
            }
        return out


@dataclass
class _TriggerState:
    spec: TriggerSpec
    bindings: dict[str, Expr]
    cron_expr: CronExpr | None = None
    next_fire_at: datetime | None = None
    # (created_at, path) of the newest blob already handed to a run.
    scan_watermark: tuple[datetime, str] | None = None
    last_error: str | None = None


class TriggerEngine:
    def __init__(
        self,
        runs: RunStarter | None,
        bus: EventBus | None = None,
        store: BlobLister | None = None,
        clock: Clock | None = None,
    ):
        self._runs = runs
        self._bus = bus
        self._store = store
        self._clock = clock or WallClock()
        self._lock = threading.RLock()
        self._triggers: dict[str, _TriggerState] = {}

    # -- registration ------------------------------------------------------

    def register_trigger(self, spec: TriggerSpec) -> None:
        with self._lock:
            if spec.name in self._triggers:
                raise DuplicateName(spec.name)
            if self._runs is None or not self._runs.has_pipeline(spec.pipeline):
                raise UnknownPipeline(spec.pipeline)
            state = self._validate(spec)
            if spec.kind == "Schedule" and spec.enabled:
                state.next_fire_at = next_fire(state.cron_expr, self._clock.now_utc())
            self._triggers[spec.name] = state
            if spec.kind == "Event":
                self._wire_event_trigger(spec)

    def _validate(self, spec: TriggerSpec) -> _TriggerState:
        if spec.kind not in ("Event", "Schedule"):
            raise InvalidTrigger(f"kind must be Event or Schedule: {spec.kind!r}")
        cron_expr = None
        if spec.kind == "Schedule":
            if not spec.cron:
                raise InvalidTrigger("Schedule trigger requires a cron expression")
            cron_expr = parse_cron(spec.cron)
            if spec.scan is not None and self._store is None:
                raise InvalidTrigger("scan triggers need a blob store attached")
            allowed = SCAN_CONTEXT if spec.scan is not None else SCHEDULE_CONTEXT
        else:
            if spec.cron is not None:
                raise InvalidTrigger("Event trigger must not carry a cron expression")
            if spec.scan is not None:
                raise InvalidTrigger("scan applies only to Schedule triggers")
            if spec.event_filter is None:
                raise InvalidTrigger("Event trigger requires an event_filter")
            if self._bus is None:
                raise InvalidTrigger("Event triggers need an event bus attached")
            allowed = EVENT_CONTEXT
        compiled: dict[str, Expr] = {}
        for param, text in spec.bindings.items():
            try:
                expr = parse_expr(text)
            except BadExpression as exc:
                raise BadBinding(f"{param}: {exc}") from exc
            bad = expr.references() - allowed
            if bad:
                names = ", ".join(sorted(f"@{ns}.{f}" for ns, f in bad))
                raise BadBinding(
                    f"{param}: {names} not available on a {spec.kind} trigger"
                )
            compiled[param] = expr
        return _TriggerState(spec=spec, bindings=compiled, cron_expr=cron_expr)

    def _wire_event_trigger(self, spec: TriggerSpec) -> None:
        assert self._bus is not None and spec.event_filter is not None
        self._bus.register_target(spec.name, self._make_handler(spec.name))
        self._bus.subscribe(
            SubscriptionFilter(
                container=spec.event_filter.container,
                path_prefix=spec.event_filter.path_prefix,
                path_suffix=spec.event_filter.path_suffix,
                kinds=frozenset(spec.event_filter.kinds),
            ),
            target=spec.name,
        )

    def _make_handler(self, name: str):
        def handler(event: BlobEvent) -> None:
            self.deliver_event(name, event)

        return handler

    # -- state changes -------------------------------------------------------

    def enable(self, name: str) -> None:
        with self._lock:
            state = self._get(name)
            state.spec.enabled = True
            if state.cron_expr is not None:
                # Re-anchor: fires missed while disabled are skipped.
                state.next_fire_at = next_fire(state.cron_expr, self._clock.now_utc())

    def disable(self, name: str) -> None:
        with self._lock:
            self._get(name).spec.enabled = False

    def list_triggers(self) -> list[dict[str, Any]]:
        with self._lock:
            out = []
            for state in self._triggers.values():
                item = state.spec.to_json()
                if state.next_fire_at is not None:
                    item["next_fire_at"] = rfc3339(state.next_fire_at)
                if state.last_error:
                    item["last_error"] = state.last_error
                out.append(item)
            return out

    def _get(self, name: str) -> _TriggerState:
        state = self._triggers.get(name)
        if state is None:
            raise UnknownTrigger(name)
        return state

    # -- firing ---------------------------------------------------------------

    def fire(self, name: str, context: dict[str, dict[str, str]]) -> str:
        """Resolve bindings against context and start one run."""
        with self._lock:
            state = self._get(name)
            if not state.spec.enabled:
                raise InvalidTrigger(f"trigger disabled: {name}")
            bindings = dict(state.bindings)
            spec = state.spec
        parameters = {}
        for param, expr in bindings.items():
            try:
                parameters[param] = expr.evaluate(context)
            except ExpressionEvaluationError as exc:
                raise BindingEvaluationError(str(exc)) from exc
        if self._runs is None:
            raise OrchestratorUnavailable("no run starter attached")
        return self._runs.start_run(
            spec.pipeline, parameters, {"trigger": spec.name, "kind": spec.kind}
        )

    def deliver_event(self, name: str, event: BlobEvent) -> None:
        """Event-bus target: one run per delivered event on an enabled trigger."""
        with self._lock:
            state = self._triggers.get(name)
            if state is None:
                raise UnknownTrigger(name)
            if not state.spec.enabled:
                return
        self.fire(
            name, {"event": {"container": event.container, "path": event.path}}
        )

    def tick(self, now: datetime | None = None) -> list[str]:
        """Fire every due schedule trigger; returns run ids started."""
        now = now or self._clock.now_utc()
        started: list[str] = []
        with self._lock:
            due: list[tuple[_TriggerState, datetime]] = []
            for state in self._triggers.values():
                if state.cron_expr is None or not state.spec.enabled:
                    continue
                if state.next_fire_at is not None and state.next_fire_at <= now:
                    due.append((state, state.next_fire_at))
                    # Skip any fires missed since then.
                    state.next_fire_at = next_fire(state.cron_expr, now)
        for state, fire_time in due:
            try:
                started.extend(self._fire_schedule(state, fire_time))
                state.last_error = None
            except TriggerError as exc:
                state.last_error = str(exc)
                logger.warning("schedule trigger %s failed: %s", state.spec.name, exc)
        return started

    def _fire_schedule(self, state: _TriggerState, fire_time: datetime) -> list[str]:
        base_context = {"schedule": {"fire_time": rfc3339(fire_time)}}
        if state.spec.scan is None:
            return [self.fire(state.spec.name, base_context)]
        assert self._store is not None
        scan = state.spec.scan
        entries = self._store.list_blobs(scan.container, scan.path_prefix)
        run_ids: list[str] = []
        watermark = state.scan_watermark
        newest = watermark
        for entry in sorted(entries, key=lambda e: (e.created_at, e.path)):
            if scan.path_suffix and not entry.path.endswith(scan.path_suffix):
                continue
            key = (entry.created_at, entry.path)
            if watermark is not None and key <= watermark:
                continue
            context = dict(base_context)
            context["scan"] = {"container": scan.container, "path": entry.path}
            run_ids.append(self.fire(state.spec.name, context))
            if newest is None or key > newest:
                newest = key
        state.scan_watermark = newest
        return run_ids
