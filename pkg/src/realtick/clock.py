"""Injectable wall clocks.

Everything that sleeps or timestamps goes through a Clock so protocol and
device behavior can be tested deterministically.  Timestamps are rational
milliseconds; only the actual OS sleep converts to float.
"""

from __future__ import annotations

import threading
import time
from fractions import Fraction
from typing import Callable


class Clock:
    def now_ms(self) -> Fraction:
        raise NotImplementedError

    def wait(self, event: threading.Event, timeout_ms: Fraction | None) -> bool:
        """Block until the event is set or the timeout elapses.

        Returns True iff the event was set.  timeout_ms None waits forever.
        """
        raise NotImplementedError


class WallClock(Clock):
    def now_ms(self) -> Fraction:
        return Fraction(time.monotonic_ns(), 1_000_000)

    def wait(self, event: threading.Event, timeout_ms: Fraction | None) -> bool:
        if timeout_ms is None:
            return event.wait()
        if timeout_ms <= 0:
            return event.is_set()
        return event.wait(float(timeout_ms) / 1000.0)


class MockClock(Clock):
    """Manual time.  wait() advances instantly, firing scheduled callbacks
    (e.g. scripted interrupts) at their due instants along the way."""

    def __init__(self, start_ms: Fraction = Fraction(0)):
        self._now = Fraction(start_ms)
        self._lock = threading.Lock()
        self._scheduled: list[tuple[Fraction, Callable[[], None]]] = []

    def now_ms(self) -> Fraction:
        with self._lock:
            return self._now

    def schedule(self, at_ms: Fraction, action: Callable[[], None]) -> None:
        with self._lock:
            self._scheduled.append((Fraction(at_ms), action))
            self._scheduled.sort(key=lambda item: item[0])

    def advance(self, delta_ms: Fraction) -> None:
        """Move time forward outside of a wait, firing due callbacks."""
        self._run_until(self.now_ms() + Fraction(delta_ms))

    def _run_until(self, deadline: Fraction) -> None:
        while True:
            with self._lock:
                if self._scheduled and self._scheduled[0][0] <= deadline:
                    at, action = self._scheduled.pop(0)
                    self._now = max(self._now, at)
                else:
                    self._now = max(self._now, deadline)
                    return
            action()

    def wait(self, event: threading.Event, timeout_ms: Fraction | None) -> bool:
        if event.is_set():
            return True
        if timeout_ms is None:
            # fire whatever is scheduled; without a wake source this would
            # never return, which is a test bug worth hearing about
            while True:
                with self._lock:
                    if not self._scheduled:
                        break
                    at, action = self._scheduled.pop(0)
                    self._now = max(self._now, at)
                action()
                if event.is_set():
                    return True
            raise RuntimeError("MockClock: unbounded wait with no scheduled wake")
        deadline = self.now_ms() + Fraction(timeout_ms)
        while True:
            with self._lock:
                if self._scheduled and self._scheduled[0][0] <= deadline:
                    at, action = self._scheduled.pop(0)
                    self._now = max(self._now, at)
                else:
                    self._now = max(self._now, deadline)
                    return event.is_set()
            action()
            if event.is_set():
                return True
