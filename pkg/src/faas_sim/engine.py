"""Deterministic discrete-event core: virtual clock, event queue, named RNG streams.

Virtual time is integer milliseconds. Events fire in (fire_at_ms, seq) order
where seq is assigned at scheduling time, so the processed-event log is a
total order and replays are bit-identical for equal configuration and seed.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng


class EventKind(enum.Enum):
    REQUEST_ARRIVAL = "RequestArrival"
    INSTANCE_READY = "InstanceReady"
    REQUEST_COMPLETE = "RequestComplete"
    IDLE_EXPIRY = "IdleExpiry"
    SCALE_EVALUATION = "ScaleEvaluation"
    METRICS_SAMPLE = "MetricsSample"
    CONCURRENCY_SAMPLE = "ConcurrencySample"


class SchedulingInPast(ValueError):
    pass


class HandlerPanic(RuntimeError):
    """An event handler raised; carries the offending event kind and time."""

    def __init__(self, kind: EventKind, fire_at_ms: int, cause: BaseException):
        super().__init__(f"handler for {kind.value} at t={fire_at_ms}ms failed: {cause!r}")
        self.kind = kind
        self.fire_at_ms = fire_at_ms


@dataclass(order=True)
class _Event:
    fire_at_ms: int
    seq: int
    kind: EventKind = field(compare=False)
    subject: str = field(compare=False)
    callback: Callable[[], None] = field(compare=False)
    cancelled: bool = field(compare=False, default=False)


class EventHandle:
    __slots__ = ("_event",)

    def __init__(self, event: _Event):
        self._event = event

    def cancel(self) -> None:
        self._event.cancelled = True

    @property
    def cancelled(self) -> bool:
        return self._event.cancelled


@dataclass
class RunStats:
    events_processed: int


class Engine:
    """One engine per experiment; single-threaded by contract."""

    def __init__(self, master_seed: int, event_log: list[str] | None = None):
        self.master_seed = master_seed
        self.now = 0
        self.events_processed = 0
        self._heap: list[_Event] = []
        self._next_seq = 0
        self._streams: dict[str, np.random.Generator] = {}
        self._event_log = event_log

    def stream(self, stream_id: str) -> np.random.Generator:
        """Named RNG stream; adding a consumer never perturbs other streams."""
        if stream_id not in self._streams:
            self._streams[stream_id] = rng.stream(self.master_seed, stream_id)
        return self._streams[stream_id]

    def schedule(self, fire_at_ms: int, kind: EventKind, subject: str,
                 callback: Callable[[], None]) -> EventHandle:
        if fire_at_ms < self.now:
            raise SchedulingInPast(
                f"cannot schedule {kind.value} at t={fire_at_ms} (now={self.now})")
        event = _Event(int(fire_at_ms), self._next_seq, kind, subject, callback)
        self._next_seq += 1
        heapq.heappush(self._heap, event)
        return EventHandle(event)

    def run(self, until: int | None = None) -> RunStats:
        """Process events in (fire_at_ms, seq) order until the queue is empty
        or the next event lies beyond `until`. Cancelled events are dropped
        silently (lazy tombstones). The clock never moves backward."""
        processed = 0
        while self._heap:
            if until is not None and self._heap[0].fire_at_ms > until:
                break
            event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self.now = event.fire_at_ms
            if self._event_log is not None:
                self._event_log.append(
                    f"{event.fire_at_ms} {event.seq} {event.kind.value} {event.subject}")
            try:
                event.callback()
            except Exception as e:
                raise HandlerPanic(event.kind, event.fire_at_ms, e) from e
            processed += 1
        if until is not None and until > self.now:
            self.now = until
        self.events_processed += processed
        return RunStats(events_processed=processed)
