from __future__ import annotations

import threading
import time

from flowdbg.runtime import RealScheduler, VirtualScheduler


class TestVirtualScheduler:
    def test_callbacks_run_in_time_then_insertion_order(self):
        sched = VirtualScheduler()
        seen = []
        sched.call_later(0.5, seen.append, "late")
        sched.call_soon(seen.append, "first")
        sched.call_soon(seen.append, "second")
        sched.call_later(0.2, seen.append, "middle")
        sched.run_until(1.0)
        assert seen == ["first", "second", "middle", "late"]
        assert sched.now() == 1.0

    def test_nested_zero_delay_chains_drain(self):
        sched = VirtualScheduler()
        seen = []

        def outer():
            seen.append("outer")
            sched.call_soon(lambda: seen.append("inner"))

        sched.call_soon(outer)
        sched.run_pending()
        assert seen == ["outer", "inner"]

    def test_cancel(self):
        sched = VirtualScheduler()
        seen = []
        handle = sched.call_later(0.1, seen.append, "never")
        handle.cancel()
        sched.advance(1.0)
        assert seen == []

    def test_next_deadline_skips_cancelled(self):
        sched = VirtualScheduler()
        h1 = sched.call_later(0.1, lambda: None)
        sched.call_later(0.2, lambda: None)
        h1.cancel()
        assert sched.next_deadline() == 0.2

    def test_callback_sees_scheduled_time(self):
        sched = VirtualScheduler()
        stamps = []
        sched.call_later(0.25, lambda: stamps.append(sched.now()))
        sched.advance(2.0)
        assert stamps == [0.25]

    def test_exception_does_not_stop_the_loop(self):
        sched = VirtualScheduler()
        seen = []
        sched.call_soon(lambda: 1 / 0)
        sched.call_soon(seen.append, "alive")
        sched.run_pending()
        assert seen == ["alive"]


class TestRealScheduler:
    def test_runs_callbacks_on_worker_thread_in_order(self):
        sched = RealScheduler("test")
        seen = []
        done = threading.Event()
        sched.call_soon(seen.append, 1)
        sched.call_soon(seen.append, 2)
        sched.call_soon(lambda: (seen.append(3), done.set()))
        assert done.wait(2.0)
        assert seen == [1, 2, 3]
        sched.stop()

    def test_call_later_fires_after_delay(self):
        sched = RealScheduler("test")
        fired = threading.Event()
        t0 = time.monotonic()
        sched.call_later(0.05, fired.set)
        assert fired.wait(2.0)
        assert time.monotonic() - t0 >= 0.045
        sched.stop()

    def test_cancel_prevents_execution(self):
        sched = RealScheduler("test")
        seen = []
        handle = sched.call_later(0.05, seen.append, "no")
        handle.cancel()
        time.sleep(0.15)
        assert seen == []
        sched.stop()

    def test_in_callback_flag(self):
        sched = RealScheduler("test")
        result = []
        done = threading.Event()
        sched.call_soon(lambda: (result.append(sched.in_callback), done.set()))
        assert done.wait(2.0)
        assert result == [True]
        assert sched.in_callback is False
        sched.stop()
