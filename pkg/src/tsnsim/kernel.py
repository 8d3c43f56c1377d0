"""Discrete-event kernel with integer-nanosecond time and bounded-offset device clocks.

All simulated time is an ``int`` count of nanoseconds since the start of the run.
The kernel owns the single global clock; every device reads time through its own
:class:`ClockModel`, which adds a constant signed offset.
"""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000

DEFAULT_SYNC_BOUND = 500 * NS


class SimulationError(Exception):
    pass


class SchedulingInPast(SimulationError):
    pass


class UnknownDevice(SimulationError, KeyError):
    pass


_UNIT_NS = {"ns": NS, "us": US, "µs": US, "ms": MS, "s": S}
_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|µs|ms|s)\s*$")


def parse_duration(text: str | int) -> int:
    """Parse ``"100ms"``, ``"122.4us"`` or a bare integer (ns) into nanoseconds.

    Fractional values are accepted only when they land exactly on a nanosecond.
    """
    if isinstance(text, bool):
        raise ValueError(f"not a duration: {text!r}")
    if isinstance(text, int):
        return text
    m = _DURATION_RE.match(str(text))
    if not m:
        raise ValueError(f"not a duration: {text!r}")
    number, unit = m.groups()
    whole, _, frac = number.partition(".")
    scale = _UNIT_NS[unit]
    value = int(whole) * scale
    if frac:
        num = int(frac) * scale
        den = 10 ** len(frac)
        if num % den:
            raise ValueError(f"{text!r} is not a whole number of nanoseconds")
        value += num // den
    return value


def format_duration(ns: int) -> str:
    """Shortest exact unit string for ``ns`` (inverse of :func:`parse_duration`)."""
    for unit, scale in (("s", S), ("ms", MS), ("us", US)):
        if ns and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"


def format_seconds(ns: int) -> str:
    """Decimal seconds with 9 fractional digits, computed without floats."""
    sign = "-" if ns < 0 else ""
    q, r = divmod(abs(ns), S)
    return f"{sign}{q}.{r:09d}"


@dataclass(frozen=True)
class ClockModel:
    device_id: str
    offset: int = 0
    sync_bound: int = DEFAULT_SYNC_BOUND

    def __post_init__(self):
        if abs(self.offset) > self.sync_bound:
            raise ValueError(
                f"clock offset {self.offset} ns of {self.device_id} exceeds ±{self.sync_bound} ns"
            )


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int = -1
    target: str = field(default="", compare=False)
    payload: Any = field(default=None, compare=False)
    label: str = field(default="", compare=False)
    cancelled: bool = field(default=False, compare=False)


class Kernel:
    """Single-threaded event loop.

    Event payloads are zero-argument callables or arbitrary objects; the latter
    are passed to the handler registered for the event's target.  Events with
    the same ``fire_at`` run in ascending ``seq`` (insertion order).
    """

    def __init__(self, trace: bool = False):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._clocks: dict[str, ClockModel] = {}
        self._handlers: dict[str, Callable[[Any], None]] = {}
        self.fired = 0
        self.trace: list[tuple[int, int, str, str]] | None = [] if trace else None

    # -- clocks -----------------------------------------------------------
    def register(self, clock: ClockModel, handler: Callable[[Any], None] | None = None) -> None:
        self._clocks[clock.device_id] = clock
        if handler is not None:
            self._handlers[clock.device_id] = handler

    def clock(self, device_id: str) -> ClockModel:
        try:
            return self._clocks[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    @property
    def devices(self) -> list[str]:
        return list(self._clocks)

    def local_time(self, device_id: str, at: int | None = None) -> int:
        t = self.now if at is None else at
        return max(0, t + self.clock(device_id).offset)

    def local_to_global(self, device_id: str, t_local: int) -> int:
        return t_local - self.clock(device_id).offset

    # -- events -----------------------------------------------------------
    def schedule(self, event: Event) -> Event:
        if event.fire_at < self.now:
            raise SchedulingInPast(f"event at {event.fire_at} ns scheduled at t={self.now} ns")
        if event.seq < 0:
            event.seq = self._seq
        self._seq = max(self._seq, event.seq) + 1
        heapq.heappush(self._queue, event)
        return event

    def at(self, fire_at: int, target: str, payload: Any, label: str = "") -> Event:
        return self.schedule(Event(fire_at, target=target, payload=payload, label=label))

    def after(self, delay: int, target: str, payload: Any, label: str = "") -> Event:
        return self.at(self.now + delay, target, payload, label)

    @staticmethod
    def cancel(event: Event | None) -> None:
        if event is not None:
            event.cancelled = True

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def _fire(self, event: Event) -> None:
        self.now = event.fire_at
        self.fired += 1
        if self.trace is not None:
            self.trace.append((event.fire_at, event.seq, event.target, event.label))
        if callable(event.payload):
            event.payload()
        else:
            self._handlers[event.target](event.payload)

    def step(self) -> bool:
        while self._queue:
            event = heapq.heappop(self._queue)
            if not event.cancelled:
                self._fire(event)
                return True
        return False

    def run_until(self, t_end: int) -> None:
        while self._queue and self._queue[0].fire_at <= t_end:
            event = heapq.heappop(self._queue)
            if not event.cancelled:
                self._fire(event)
        self.now = max(self.now, t_end)

    def run(self, max_events: int | None = None) -> None:
        """Run until the queue is empty."""
        n = 0
        while self.step():
            n += 1
            if max_events is not None and n >= max_events:
                raise SimulationError(f"event budget of {max_events} exhausted")
