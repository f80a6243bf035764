"""Live run telemetry.

A single hub owns every run's counters; the scheduler feeds it events
through the metrics sink and dashboards consume coalesced snapshot
streams. Snapshots satisfy the partition identity completed +
failed_exhausted + in_flight + pending == total_jobs at all times, and the
final snapshot is always delivered to every subscriber.
"""

from __future__ import annotations

import asyncio
from collections import deque
from dataclasses import dataclass, asdict

from .clock import Clock

WINDOW_SECONDS = 60.0
COALESCE_INTERVAL = 0.25  # at most 4 snapshot emissions per second


class UnknownRunError(Exception):
    pass


@dataclass(frozen=True)
class MetricsSnapshot:
    run_id: str
    total_jobs: int
    completed: int
    failed_exhausted: int
    in_flight: int
    pending: int
    retries_total: int
    format_repairs_total: int
    tokens_in: int
    tokens_out: int
    current_rpm: int
    estimated_cost: float
    eta_seconds: float | None
    at: float

    def to_mapping(self) -> dict:
        return asdict(self)


class _RunMetrics:
    def __init__(
        self,
        run_id: str,
        total_jobs: int,
        price_in: float,
        price_out: float,
        already_completed: int = 0,
    ):
        self.run_id = run_id
        self.total_jobs = total_jobs
        self.price_in = price_in
        self.price_out = price_out
        self.completed = already_completed
        self.failed_exhausted = 0
        self.in_flight = 0
        self.retries_total = 0
        self.format_repairs_total = 0
        self.tokens_in = 0
        self.tokens_out = 0
        self.dispatch_times: deque[float] = deque()
        self.completion_times: deque[float] = deque()
        self.subscribers: list[asyncio.Queue] = []
        self.last_emit: float | None = None
        self.flush_task: asyncio.Task | None = None
        self.finished = False


class MetricsHub:
    """Single owner of all run counters; snapshots are immutable fan-out."""

    def __init__(self, clock: Clock, coalesce_interval: float = COALESCE_INTERVAL):
        self.clock = clock
        self.coalesce_interval = coalesce_interval
        self._runs: dict[str, _RunMetrics] = {}

    def register_run(
        self,
        run_id: str,
        total_jobs: int,
        price_in: float = 0.0,
        price_out: float = 0.0,
        already_completed: int = 0,
    ) -> None:
        """(Re-)register a run; resumed runs seed the completed counter so
        their snapshots account for the whole cross product."""
        self._runs[run_id] = _RunMetrics(
            run_id, total_jobs, price_in, price_out, already_completed
        )

    def _run(self, run_id: str) -> _RunMetrics:
        run = self._runs.get(run_id)
        if run is None:
            raise UnknownRunError(run_id)
        return run

    def record(self, event: dict) -> None:
        run = self._run(event["run_id"])
        at = event.get("at", self.clock.now())
        kind = event["type"]
        if kind == "dispatched":
            run.in_flight += 1
            run.dispatch_times.append(at)
        elif kind == "retried":
            run.in_flight -= 1
            run.retries_total += 1
        elif kind == "repaired":
            run.format_repairs_total += 1
            run.dispatch_times.append(at)  # a repair is another provider call
        elif kind == "completed":
            run.in_flight -= 1
            run.completed += 1
            run.completion_times.append(at)
        elif kind == "exhausted":
            run.in_flight -= 1
            run.failed_exhausted += 1
        elif kind == "usage":
            run.tokens_in += event.get("input_tokens", 0)
            run.tokens_out += event.get("output_tokens", 0)
        else:
            raise ValueError(f"unknown metrics event {kind!r}")
        self._emit_or_schedule(run)

    def snapshot(self, run_id: str) -> MetricsSnapshot:
        run = self._run(run_id)
        return self._snapshot(run)

    def _snapshot(self, run: _RunMetrics) -> MetricsSnapshot:
        now = self.clock.now()
        horizon = now - WINDOW_SECONDS
        while run.dispatch_times and run.dispatch_times[0] <= horizon:
            run.dispatch_times.popleft()
        while run.completion_times and run.completion_times[0] <= horizon:
            run.completion_times.popleft()
        pending = run.total_jobs - run.completed - run.failed_exhausted - run.in_flight
        rate = len(run.completion_times) / WINDOW_SECONDS
        eta = pending / rate if rate > 0 and pending > 0 else None
        cost = run.tokens_in * run.price_in + run.tokens_out * run.price_out
        return MetricsSnapshot(
            run_id=run.run_id,
            total_jobs=run.total_jobs,
            completed=run.completed,
            failed_exhausted=run.failed_exhausted,
            in_flight=run.in_flight,
            pending=pending,
            retries_total=run.retries_total,
            format_repairs_total=run.format_repairs_total,
            tokens_in=run.tokens_in,
            tokens_out=run.tokens_out,
            current_rpm=len(run.dispatch_times),
            estimated_cost=cost,
            eta_seconds=eta,
            at=now,
        )

    def _deliver(self, run: _RunMetrics) -> None:
        snapshot = self._snapshot(run)
        run.last_emit = self.clock.now()
        for queue in run.subscribers:
            queue.put_nowait(snapshot)

    def _emit_or_schedule(self, run: _RunMetrics) -> None:
        if not run.subscribers or run.finished:
            return
        now = self.clock.now()
        if run.last_emit is None or now - run.last_emit >= self.coalesce_interval:
            self._deliver(run)
            return
        if run.flush_task is None or run.flush_task.done():
            delay = run.last_emit + self.coalesce_interval - now
            run.flush_task = asyncio.get_event_loop().create_task(self._flush_later(run, delay))

    async def _flush_later(self, run: _RunMetrics, delay: float) -> None:
        await self.clock.sleep(delay)
        if not run.finished:
            self._deliver(run)

    def finish_run(self, run_id: str) -> None:
        """Force the terminal snapshot out and close all subscriptions."""
        run = self._run(run_id)
        if run.finished:
            return
        if run.flush_task is not None and not run.flush_task.done():
            run.flush_task.cancel()
        self._deliver(run)
        run.finished = True
        for queue in run.subscribers:
            queue.put_nowait(None)

    def subscribe(self, run_id: str) -> "Subscription":
        run = self._run(run_id)
        queue: asyncio.Queue = asyncio.Queue()
        queue.put_nowait(self._snapshot(run))
        if run.finished:
            queue.put_nowait(None)
        else:
            run.subscribers.append(queue)
        return Subscription(queue)

    def is_finished(self, run_id: str) -> bool:
        return self._run(run_id).finished

    def drop_run(self, run_id: str) -> None:
        self._runs.pop(run_id, None)


class Subscription:
    """Ordered stream of snapshots; iteration ends at run completion."""

    def __init__(self, queue: asyncio.Queue):
        self._queue = queue

    def __aiter__(self) -> "Subscription":
        return self

    async def __anext__(self) -> MetricsSnapshot:
        item = await self._queue.get()
        if item is None:
            raise StopAsyncIteration
        return item
