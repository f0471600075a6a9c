"""Timer and executor primitives shared by the engine, agent, and client.

A scheduler owns a clock and runs callbacks one at a time, so state that is
only touched from scheduler callbacks needs no extra locking. Two flavours:

* RealScheduler drives callbacks from a dedicated worker thread against the
  monotonic clock. `call_soon`/`call_later` are safe from any thread.
* VirtualScheduler runs callbacks inline while the caller advances simulated
  time, which makes multi-component runs bit-for-bit reproducible and lets
  tests assert at exact timestamps.

Callbacks due at the same instant run in scheduling order.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Callable, Optional

log = logging.getLogger(__name__)


class TimerHandle:
    """Cancellation token for a scheduled callback."""

    __slots__ = ("when", "_seq", "_fn", "_args", "cancelled")

    def __init__(self, when: float, seq: int, fn: Callable, args: tuple):
        self.when = when
        self._seq = seq
        self._fn = fn
        self._args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True
        self._fn = None
        self._args = ()

    def _run(self) -> None:
        fn = self._fn
        if self.cancelled or fn is None:
            return
        try:
            fn(*self._args)
        except Exception:
            log.exception("scheduler callback failed")


class RealScheduler:
    """Wall-clock scheduler backed by one worker thread."""

    def __init__(self, name: str = "flowdbg-scheduler"):
        self._heap: list[tuple[float, int, TimerHandle]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._thread.start()

    def now(self) -> float:
        return time.monotonic()

    def call_later(self, delay: float, fn: Callable, *args) -> TimerHandle:
        when = self.now() + max(0.0, delay)
        with self._cond:
            if self._stopped:
                raise RuntimeError("scheduler stopped")
            handle = TimerHandle(when, next(self._seq), fn, args)
            heapq.heappush(self._heap, (when, handle._seq, handle))
            self._cond.notify()
        return handle

    def call_soon(self, fn: Callable, *args) -> TimerHandle:
        return self.call_later(0.0, fn, *args)

    @property
    def in_callback(self) -> bool:
        """True when the caller is running on the scheduler thread."""
        return threading.current_thread() is self._thread

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if not self.in_callback:
            self._thread.join(timeout=5.0)

    def _run(self) -> None:
        while True:
            with self._cond:
                while True:
                    if self._stopped:
                        return
                    if not self._heap:
                        self._cond.wait()
                        continue
                    when, _, handle = self._heap[0]
                    delay = when - self.now()
                    if delay <= 0:
                        heapq.heappop(self._heap)
                        break
                    self._cond.wait(timeout=delay)
            handle._run()


class VirtualScheduler:
    """Simulated-time scheduler; callbacks run while the caller advances time."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._heap: list[tuple[float, int, TimerHandle]] = []
        self._seq = itertools.count()
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._now

    def call_later(self, delay: float, fn: Callable, *args) -> TimerHandle:
        with self._lock:
            when = self._now + max(0.0, delay)
            handle = TimerHandle(when, next(self._seq), fn, args)
            heapq.heappush(self._heap, (when, handle._seq, handle))
        return handle

    def call_soon(self, fn: Callable, *args) -> TimerHandle:
        return self.call_later(0.0, fn, *args)

    @property
    def in_callback(self) -> bool:
        return False

    def stop(self) -> None:
        with self._lock:
            self._heap.clear()

    def next_deadline(self) -> Optional[float]:
        with self._lock:
            while self._heap and self._heap[0][2].cancelled:
                heapq.heappop(self._heap)
            return self._heap[0][0] if self._heap else None

    def run_until(self, deadline: float) -> None:
        """Execute every callback due at or before `deadline`, then land there."""
        while True:
            with self._lock:
                if not self._heap or self._heap[0][0] > deadline:
                    break
                when, _, handle = heapq.heappop(self._heap)
                self._now = max(self._now, when)
            handle._run()
        self._now = max(self._now, deadline)

    def advance(self, dt: float) -> None:
        self.run_until(self._now + dt)

    def run_pending(self) -> None:
        """Drain the zero-delay callback chain at the current instant."""
        self.run_until(self._now)
