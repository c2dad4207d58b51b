"""5-field POSIX cron expressions with next-occurrence computation.

Format: "minute hour day_of_month month day_of_week"

Field ranges:
  minute 0-59, hour 0-23, day_of_month 1-31, month 1-12,
  day_of_week 0-6 with 0 = Sunday.

Supported syntax per field: "*", single values, lists "a,b", ranges
"a-b", and steps "*/n" or "a-b/n". All evaluation is in UTC.

Day matching follows the classic Vixie rule: when both day-of-month and
day-of-week are restricted (written as anything other than "*"), a date
matches if EITHER matches; otherwise the restricted one must match.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

FIELD_NAMES = ("minute", "hour", "day_of_month", "month", "day_of_week")
FIELD_RANGES = ((0, 59), (0, 23), (1, 31), (1, 12), (0, 6))

HORIZON_YEARS = 5


class CronError(ValueError):
    pass


class CronSyntaxError(CronError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


class CronRangeError(CronError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


class NoFireWithinHorizon(CronError):
    """No matching time exists within the search horizon (e.g. Feb 30)."""


@dataclass(frozen=True)
class CronExpr:
    minute: frozenset[int]
    hour: frozenset[int]
    day_of_month: frozenset[int]
    month: frozenset[int]
    day_of_week: frozenset[int]
    dom_restricted: bool
    dow_restricted: bool

    def field_sets(self) -> tuple[frozenset[int], ...]:
        return (self.minute, self.hour, self.day_of_month, self.month, self.day_of_week)

    def matches(self, dt: datetime) -> bool:
        if dt.minute not in self.minute:
            return False
        if dt.hour not in self.hour:
            return False
        if dt.month not in self.month:
            return False
        return self._day_matches(dt)

    def _day_matches(self, dt: datetime) -> bool:
        dom_ok = dt.day in self.day_of_month
        dow_ok = _cron_weekday(dt) in self.day_of_week
        if self.dom_restricted and self.dow_restricted:
            return dom_ok or dow_ok
        if self.dom_restricted:
            return dom_ok
        if self.dow_restricted:
            return dow_ok
        return True


def _cron_weekday(dt: datetime) -> int:
    # datetime.weekday(): Monday=0 .. Sunday=6; cron wants Sunday=0.
    return (dt.weekday() + 1) % 7


_ITEM_RE = re.compile(r"^(\*|\d+|\d+-\d+)(?:/(\d+))?$")


def parse_cron(text: str) -> CronExpr:
    """Parse a cron expression into canonical per-field value sets."""
    fields: list[tuple[str, int]] = []
    for m in re.finditer(r"\S+", text):
        fields.append((m.group(0), m.start()))
    if len(fields) != 5:
        raise CronSyntaxError(0, f"expected 5 fields, got {len(fields)}")

    sets: list[frozenset[int]] = []
    for (field_text, pos), name, (lo, hi) in zip(fields, FIELD_NAMES, FIELD_RANGES):
        sets.append(_parse_field(field_text, pos, name, lo, hi))
    return CronExpr(
        minute=sets[0],
        hour=sets[1],
        day_of_month=sets[2],
        month=sets[3],
        day_of_week=sets[4],
        dom_restricted=fields[2][0] != "*",
        dow_restricted=fields[4][0] != "*",
    )


def _parse_field(text: str, pos: int, name: str, lo: int, hi: int) -> frozenset[int]:
    values: set[int] = set()
    offset = 0
    for item in text.split(","):
        item_pos = pos + offset
        offset += len(item) + 1
        if not item:
            raise CronSyntaxError(item_pos, f"empty item in {name} field")
        m = _ITEM_RE.match(item)
        if not m:
            raise CronSyntaxError(item_pos, f"cannot parse {item!r} in {name} field")
        base, step_text = m.group(1), m.group(2)
        step = 1
        if step_text is not None:
            step = int(step_text)
            if step < 1:
                raise CronRangeError(item_pos, f"step must be >= 1 in {name} field")
            if base != "*" and "-" not in base:
                raise CronSyntaxError(item_pos, f"step requires '*' or a range in {name} field")
        if base == "*":
            start, end = lo, hi
        elif "-" in base:
            a, b = base.split("-", 1)
            start, end = int(a), int(b)
            if start > end:
                raise CronRangeError(item_pos, f"range start exceeds end in {name} field")
        else:
            start = end = int(base)
        if start < lo or end > hi:
            raise CronRangeError(
                item_pos, f"{name} value out of range {lo}-{hi}: {base}"
            )
        values.update(range(start, end + 1, step))
    return frozenset(values)


def format_cron(expr: CronExpr) -> str:
    """Canonical text form; reparsing yields identical field sets."""
    parts = []
    for values, (lo, hi) in zip(expr.field_sets(), FIELD_RANGES):
        parts.append(_format_field(values, lo, hi))
    return " ".join(parts)


def _format_field(values: frozenset[int], lo: int, hi: int) -> str:
    if values == frozenset(range(lo, hi + 1)):
        return "*"
    ordered = sorted(values)
    runs: list[str] = []
    start = prev = ordered[0]
    for v in ordered[1:] + [None]:  # type: ignore[list-item]
        if v is not None and v == prev + 1:
            prev = v
            continue
        if prev - start >= 2:
            runs.append(f"{start}-{prev}")
        elif prev != start:
            runs.extend([str(start), str(prev)])
        else:
            runs.append(str(start))
        if v is not None:
            start = prev = v
    return ",".join(runs)


def next_fire(expr: CronExpr, after: datetime) -> datetime:
    """Smallest matching timestamp strictly after `after`, at second 0."""
    if after.tzinfo is None:
        after = after.replace(tzinfo=timezone.utc)
    after = after.astimezone(timezone.utc)
    candidate = after.replace(second=0, microsecond=0) + timedelta(minutes=1)
    horizon = after + timedelta(days=366 * HORIZON_YEARS)

    while candidate <= horizon:
        if candidate.month not in expr.month:
            # First minute of the next month.
            year, month = candidate.year, candidate.month + 1
            if month > 12:
                year, month = year + 1, 1
            candidate = datetime(year, month, 1, tzinfo=timezone.utc)
            continue
        if not expr._day_matches(candidate):
            candidate = (candidate + timedelta(days=1)).replace(hour=0, minute=0)
            continue
        if candidate.hour not in expr.hour:
            nxt = _next_in_set(candidate.hour, expr.hour)
            if nxt is None:
                candidate = (candidate + timedelta(days=1)).replace(hour=0, minute=0)
            else:
                candidate = candidate.replace(hour=nxt, minute=0)
            continue
        if candidate.minute not in expr.minute:
            nxt = _next_in_set(candidate.minute, expr.minute)
            if nxt is None:
                candidate = (candidate + timedelta(hours=1)).replace(minute=0)
            else:
                candidate = candidate.replace(minute=nxt)
            continue
        return candidate
    raise NoFireWithinHorizon(f"no match within {HORIZON_YEARS} years after {after.isoformat()}")


def _next_in_set(current: int, values: frozenset[int]) -> int | None:
    later = [v for v in values if v > current]
    return min(later) if later else None
