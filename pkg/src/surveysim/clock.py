"""Injectable time source.

Every component that sleeps, windows, or timestamps takes a Clock so the
whole pipeline can run under virtual time in tests. RealClock is a thin
wrapper over the event loop's notion of time; SimulatedClock implements
auto-advancing virtual time: whenever every task in the loop is parked on
a clock sleep, time jumps straight to the earliest deadline.
"""

from __future__ import annotations

import asyncio
import heapq
import itertools
import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> float: ...

    async def sleep(self, seconds: float) -> None: ...


class RealClock:
    """Wall-clock time (monotonic) with ordinary asyncio sleeps."""

    def now(self) -> float:
        return time.monotonic()

    async def sleep(self, seconds: float) -> None:
        await asyncio.sleep(max(0.0, seconds))


class SimulatedClock:
    """Deterministic virtual time for tests.

    sleep() parks the caller on a deadline heap. A pump task wakes the
    earliest sleeper once the rest of the loop has gone quiet, so a full
    scheduler run over hours of simulated rate-limit waits completes in
    milliseconds of wall time, with a reproducible interleaving.
    """

    # How many bare yields count as "the loop is quiet". Each yield lets one
    # full pass of the ready queue run, so this bounds the settled wake-up
    # chain depth between two time advances.
    SETTLE_YIELDS = 30

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._sleepers: list[tuple[float, int, asyncio.Future]] = []
        self._seq = itertools.count()
        self._pump: asyncio.Task | None = None

    def now(self) -> float:
        return self._now

    async def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            await asyncio.sleep(0)
            return
        fut = asyncio.get_running_loop().create_future()
        heapq.heappush(self._sleepers, (self._now + seconds, next(self._seq), fut))
        self._ensure_pump()
        await fut

    def _ensure_pump(self) -> None:
        if self._pump is None or self._pump.done():
            self._pump = asyncio.get_running_loop().create_task(self._run_pump())

    async def _run_pump(self) -> None:
        while self._sleepers:
            for _ in range(self.SETTLE_YIELDS):
                await asyncio.sleep(0)
            if not self._sleepers:
                break
            deadline, _, fut = heapq.heappop(self._sleepers)
            if fut.done():
                continue  # sleeper was cancelled
            if deadline > self._now:
                self._now = deadline
            fut.set_result(None)
            # Let the woken task (and anything it unblocks) run before the
            # next advance so same-deadline sleepers wake in insertion order.
            await asyncio.sleep(0)
