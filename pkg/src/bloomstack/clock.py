"""Wall clock abstraction so timing behavior is testable.

`WallClock` is the production clock. `FakeClock` only moves when a test
calls `advance()`; sleepers block until the fake time passes their
deadline. Components that wait on time (compute pool cold start, idle
termination, trigger scheduling) take a clock so tests run in
milliseconds of real time.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timezone


class WallClock:
    def now(self) -> float:
        return time.time()

    def now_utc(self) -> datetime:
        return datetime.now(timezone.utc)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Manually advanced clock. Thread-safe; `advance` wakes sleepers."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._cond = threading.Condition()

    def now(self) -> float:
        with self._cond:
            return self._now

    def now_utc(self) -> datetime:
        return datetime.fromtimestamp(self.now(), tz=timezone.utc)

    def sleep(self, seconds: float) -> None:
        with self._cond:
            deadline = self._now + seconds
            while self._now < deadline:
                # Short real-time wait guards against lost notifications.
                self._cond.wait(timeout=0.2)

    def advance(self, seconds: float) -> None:
        with self._cond:
            self._now += seconds
            self._cond.notify_all()


Clock = WallClock | FakeClock


def rfc3339(dt: datetime) -> str:
    """RFC 3339 UTC timestamp, e.g. 2021-07-14T12:03:00Z."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    text = dt.isoformat()
    return text.replace("+00:00", "Z")


def parse_rfc3339(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)
