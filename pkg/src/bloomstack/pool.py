"""Simulated processing-cluster lifecycle for Process/Render work.

The pool models the latency behavior of a managed interactive cluster:
a terminated pool pays a cold-start delay before the first task runs,
a warm pool dispatches in well under 100 ms, workers scale with queue
load between min_workers and max_workers, and an idle pool terminates
after idle_timeout. The delay is a clock sleep, not provisioning; what
matters downstream is its effect on pipeline latency.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

from .clock import Clock, WallClock

TERMINATED = "Terminated"
STARTING = "Starting"
READY = "Ready"


class PoolError(Exception):
    pass


class PoolStartTimeout(PoolError):
    """Pool stayed in Starting for more than 10x the cold-start budget."""


class TaskPanicked(PoolError):
    """Task raised; the original exception is chained as __cause__."""


@dataclass(frozen=True)
class PoolConfig:
    min_workers: int = 2
    max_workers: int = 8
    cold_start_ms: int = 3000
    idle_timeout_ms: int = 60_000
    tasks_per_worker: int = 4

    def __post_init__(self) -> None:
        if not 1 <= self.min_workers <= self.max_workers:
            raise ValueError("need 1 <= min_workers <= max_workers")
        if self.cold_start_ms < 0:
            raise ValueError("cold_start_ms must be >= 0")
        if self.idle_timeout_ms <= 0:
            raise ValueError("idle_timeout_ms must be > 0")
        if self.tasks_per_worker < 1:
            raise ValueError("tasks_per_worker must be >= 1")


def autoscale_target(queued: int, running: int, config: PoolConfig) -> int:
    """Load-proportional worker count, clamped to the configured range."""
    total = queued + running
    target = math.ceil(total / config.tasks_per_worker)
    return max(config.min_workers, min(config.max_workers, target))


@dataclass(frozen=True)
class PoolState:
    phase: str
    active_workers: int
    queued_tasks: int
    running_tasks: int
    last_activity_at: float

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "active_workers": self.active_workers,
            "queued_tasks": self.queued_tasks,
            "running_tasks": self.running_tasks,
            "last_activity_at": self.last_activity_at,
        }


class TaskHandle:
    def __init__(self, pool: "ComputePool"):
        self._pool = pool
        self._event = threading.Event()
        self._value: Any = None
        self._error: BaseException | None = None
        self.submitted_at = pool._clock.now()
        self.started_at: float | None = None
        self.completed_at: float | None = None

    def done(self) -> bool:
        return self._event.is_set()

    def result(self, timeout: float | None = None):
        if not self._event.wait(timeout):
            self._pool._check_start_timeout()
            raise TimeoutError("task did not complete in time")
        if self._error is not None:
            raise self._error
        return self._value

    def _complete(self, value: Any) -> None:
        self._value = value
        self.completed_at = self._pool._clock.now()
        self._event.set()

    def _fail(self, error: BaseException) -> None:
        self._error = error
        self.completed_at = self._pool._clock.now()
        self._event.set()


class ComputePool:
    def __init__(self, config: PoolConfig | None = None, clock: Clock | None = None,
                 _start_hook: Callable[[], None] | None = None):
        self.config = config or PoolConfig()
        self._clock = clock or WallClock()
        self._start_hook = _start_hook
        self._cond = threading.Condition()
        self._queue: deque[tuple[Callable[[], Any], TaskHandle]] = deque()
        self._phase = TERMINATED
        self._active_workers = 0
        self._running = 0
        self._starting_since: float | None = None
        self._start_generation = 0
        self._last_activity = self._clock.now()
        self._closed = False
        self._dispatcher = threading.Thread(target=self._dispatch_loop, daemon=True,
                                            name="pool-dispatch")
        self._dispatcher.start()

    # -- public ------------------------------------------------------------

    def submit(self, fn: Callable[[], Any]) -> TaskHandle:
        handle = TaskHandle(self)
        with self._cond:
            if self._closed:
                raise PoolError("pool is closed")
            self._check_start_timeout_locked()
            self._queue.append((fn, handle))
            self._last_activity = self._clock.now()
            if self._phase == TERMINATED:
                self._phase = STARTING
                self._starting_since = self._clock.now()
                self._start_generation += 1
                threading.Thread(
                    target=self._starter,
                    args=(self._start_generation,),
                    daemon=True,
                    name="pool-start",
                ).start()
            self._autoscale_locked()
            self._cond.notify_all()
        return handle

    def autoscale_step(self) -> int:
        with self._cond:
            return self._autoscale_locked()

    def tick_idle(self, now: float | None = None) -> None:
        with self._cond:
            if self._phase != READY:
                return
            if self._running or self._queue:
                return
            now = self._clock.now() if now is None else now
            if now - self._last_activity >= self.config.idle_timeout_ms / 1000.0:
                self._phase = TERMINATED
                self._active_workers = 0
                self._cond.notify_all()

    def state(self) -> PoolState:
        with self._cond:
            return PoolState(
                phase=self._phase,
                active_workers=self._active_workers,
                queued_tasks=len(self._queue),
                running_tasks=self._running,
                last_activity_at=self._last_activity,
            )

    def warm_up(self, timeout: float = 60.0) -> None:
        """Submit a no-op and wait for it, leaving the pool Ready."""
        self.submit(lambda: None).result(timeout=timeout)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._dispatcher.join(timeout=2.0)

    # -- internals -----------------------------------------------------------

    def _capacity_locked(self) -> int:
        return self._active_workers * self.config.tasks_per_worker

    def _autoscale_locked(self) -> int:
        if self._phase != READY:
            return self._active_workers
        target = autoscale_target(len(self._queue), self._running, self.config)
        if target > self._active_workers:
            self._active_workers = target
            self._cond.notify_all()
        elif target < self._active_workers and not self._queue:
            # Scale-down only on an empty queue; the formula never drops
            # capacity below the running task count.
            self._active_workers = target
        return self._active_workers

    def _starter(self, generation: int) -> None:
        if self._start_hook is not None:
            self._start_hook()
        self._clock.sleep(self.config.cold_start_ms / 1000.0)
        with self._cond:
            if self._start_generation != generation or self._phase != STARTING:
                return
            self._phase = READY
            self._active_workers = self.config.min_workers
            self._autoscale_locked()
            self._last_activity = self._clock.now()
            self._cond.notify_all()

    def _check_start_timeout(self) -> None:
        with self._cond:
            self._check_start_timeout_locked()

    def _check_start_timeout_locked(self) -> None:
        if self._phase != STARTING or self._starting_since is None:
            return
        # Floor covers cold_start_ms=0, where Starting is only a thread handoff.
        budget = max(10 * self.config.cold_start_ms / 1000.0, 1.0)
        if self._clock.now() - self._starting_since > budget:
            raise PoolStartTimeout(
                f"pool stuck in Starting beyond {budget:.1f}s"
            )

    def _dispatch_loop(self) -> None:
        while True:
            with self._cond:
                while not self._closed and not (
                    self._phase == READY
                    and self._queue
                    and self._running < self._capacity_locked()
                ):
                    self._cond.wait(timeout=0.1)
                if self._closed:
                    return
                fn, handle = self._queue.popleft()
                self._running += 1
                self._last_activity = self._clock.now()
                handle.started_at = self._clock.now()
            threading.Thread(
                target=self._run_task, args=(fn, handle), daemon=True, name="pool-task"
            ).start()

    def _run_task(self, fn: Callable[[], Any], handle: TaskHandle) -> None:
        try:
            value = fn()
        except BaseException as exc:  # noqa: BLE001 - reported via the handle
            panic = TaskPanicked(f"task raised {type(exc).__name__}: {exc}")
            panic.__cause__ = exc
            handle._fail(panic)
        else:
            handle._complete(value)
        finally:
            with self._cond:
                self._running -= 1
                self._last_activity = self._clock.now()
                self._autoscale_locked()
                self._cond.notify_all()
