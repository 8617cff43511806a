"""Deterministic simulated time.

All backend task lifecycles advance on ticks of this clock instead of wall
time, so polling loops, retries and acceptance tests replay identically.
"""

from __future__ import annotations

import threading
from typing import Callable

MODE_MANUAL = "manual"
MODE_AUTO = "auto"


class SimClock:
    """Monotonically non-decreasing tick counter.

    In manual mode the clock moves only through ``advance``. In auto mode,
    backends may additionally call ``auto_advance`` when a polling-style
    read observes pending work, so long-running serve deployments make
    progress without an external driver.
    """

    def __init__(self, mode: str = MODE_MANUAL):
        if mode not in (MODE_MANUAL, MODE_AUTO):
            raise ValueError(f"unknown clock mode {mode!r}")
        self.mode = mode
        self._now = 0
        self._lock = threading.Lock()
        self._subscribers: list[Callable[[int], None]] = []

    @property
    def now(self) -> int:
        return self._now

    def subscribe(self, callback: Callable[[int], None]) -> None:
        """Register a per-tick callback; callbacks fire in subscription
        order, once per tick."""
        self._subscribers.append(callback)

    def advance(self, ticks: int = 1) -> int:
        if ticks < 0:
            raise ValueError("the clock never goes backwards")
        for _ in range(ticks):
            with self._lock:
                self._now += 1
                now = self._now
            for callback in self._subscribers:
                callback(now)
        return self._now

    def auto_advance(self, ticks: int = 1) -> None:
        if self.mode == MODE_AUTO:
            self.advance(ticks)
