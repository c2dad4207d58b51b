"""In-process pub/sub hub routing blob events to trigger targets.

Each subscription owns a bounded FIFO queue drained by one consumer
thread, so delivery order per subscription matches publish order while
distinct subscriptions proceed in parallel. Failed deliveries are
retried with a fixed backoff up to max_delivery_attempts, then
dead-lettered; an event matching a live subscription is therefore never
silently lost. Publishing blocks when a queue is full (backpressure)
rather than dropping.
"""

from __future__ import annotations

import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable

from .store.core import BlobEvent

EVENT_KINDS = frozenset({"BlobCreated", "BlobDeleted"})
DEFAULT_QUEUE_DEPTH = 10_000
DEFAULT_RETRY_BACKOFF_S = 0.1
DEFAULT_MAX_DELIVERY_ATTEMPTS = 3


class UnknownTarget(Exception):
    """subscribe() referenced a trigger that was never registered."""


@dataclass(frozen=True)
class SubscriptionFilter:
    container: str
    path_prefix: str = ""
    path_suffix: str = ""
    kinds: frozenset[str] = EVENT_KINDS

    def __post_init__(self) -> None:
        if not self.container:
            raise ValueError("filter.container must be non-empty")
        unknown = set(self.kinds) - EVENT_KINDS
        if unknown:
            raise ValueError(f"unknown event kinds: {sorted(unknown)}")

    def matches(self, event: BlobEvent) -> bool:
        return (
            event.container == self.container
            and event.path.startswith(self.path_prefix)
            and event.path.endswith(self.path_suffix)
            and event.kind in self.kinds
        )


@dataclass(frozen=True)
class Subscription:
    subscription_id: str
    filter: SubscriptionFilter
    target: str
    max_delivery_attempts: int = DEFAULT_MAX_DELIVERY_ATTEMPTS


@dataclass(frozen=True)
class DeliveryRecord:
    event_id: str
    subscription_id: str
    attempts: int
    status: str  # "Delivered" | "DeadLettered"

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "subscription_id": self.subscription_id,
            "attempts": self.attempts,
            "status": self.status,
        }


@dataclass
class _SubState:
    subscription: Subscription
    handler: Callable[[BlobEvent], None]
    queue: "queue.Queue[BlobEvent]"
    pending: int = 0  # queued + in delivery, guarded by the bus lock
    thread: threading.Thread = field(init=False)


class EventBus:
    def __init__(
        self,
        queue_depth: int = DEFAULT_QUEUE_DEPTH,
        retry_backoff_s: float = DEFAULT_RETRY_BACKOFF_S,
    ):
        self._queue_depth = queue_depth
        self._retry_backoff_s = retry_backoff_s
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._targets: dict[str, Callable[[BlobEvent], None]] = {}
        self._subs: list[_SubState] = []
        self._records: list[DeliveryRecord] = []
        self._closed = False

    def register_target(self, name: str, handler: Callable[[BlobEvent], None]) -> None:
        with self._lock:
            self._targets[name] = handler

    def subscribe(
        self,
        filter: SubscriptionFilter,
        target: str,
        max_delivery_attempts: int = DEFAULT_MAX_DELIVERY_ATTEMPTS,
    ) -> Subscription:
        if max_delivery_attempts < 1:
            raise ValueError("max_delivery_attempts must be >= 1")
        with self._lock:
            handler = self._targets.get(target)
            if handler is None:
                raise UnknownTarget(target)
            sub = Subscription(
                subscription_id=f"sub-{uuid.uuid4().hex[:12]}",
                filter=filter,
                target=target,
                max_delivery_attempts=max_delivery_attempts,
            )
            state = _SubState(
                subscription=sub,
                handler=handler,
                queue=queue.Queue(maxsize=self._queue_depth),
            )
            state.thread = threading.Thread(
                target=self._consume, args=(state,), daemon=True, name=f"bus-{sub.target}"
            )
            self._subs.append(state)
            state.thread.start()
            return sub

    def publish(self, event: BlobEvent) -> int:
        """Enqueue for every matching subscription; returns the match count."""
        with self._lock:
            matched = [s for s in self._subs if s.subscription.filter.matches(event)]
            for state in matched:
                state.pending += 1
        for state in matched:
            state.queue.put(event)  # blocks when full: backpressure
        return len(matched)

    def dead_letters(self) -> list[DeliveryRecord]:
        with self._lock:
            return [r for r in self._records if r.status == "DeadLettered"]

    def delivery_records(self) -> list[DeliveryRecord]:
        with self._lock:
            return list(self._records)

    def drain(self, timeout: float = 30.0) -> bool:
        """Block until every enqueued event has been delivered or dead-lettered."""
        deadline = time.monotonic() + timeout
        with self._idle:
            while any(s.pending > 0 for s in self._subs):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._idle.wait(timeout=min(remaining, 0.1))
        return True

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs = list(self._subs)
        for state in subs:
            state.queue.put(None)  # type: ignore[arg-type]
        for state in subs:
            state.thread.join(timeout=2.0)

    # -- consumer --------------------------------------------------------

    def _consume(self, state: _SubState) -> None:
        sub = state.subscription
        while True:
            event = state.queue.get()
            if event is None:
                return
            attempts = 0
            delivered = False
            while attempts < sub.max_delivery_attempts:
                attempts += 1
                try:
                    state.handler(event)
                    delivered = True
                    break
                except Exception:
                    if attempts < sub.max_delivery_attempts:
                        time.sleep(self._retry_backoff_s)
            record = DeliveryRecord(
                event_id=event.event_id,
                subscription_id=sub.subscription_id,
                attempts=attempts,
                status="Delivered" if delivered else "DeadLettered",
            )
            with self._idle:
                self._records.append(record)
                state.pending -= 1
                self._idle.notify_all()
