from __future__ import annotations

import threading
import time

import pytest

from flowdbg.bus import (
    BindError,
    BusGateway,
    BusTimeoutError,
    BusUnreachableError,
    DisconnectedError,
    Envelope,
    LoopbackBus,
    WsBusClient,
)
from flowdbg.runtime import RealScheduler, VirtualScheduler


@pytest.fixture
def vbus():
    return VirtualScheduler(), LoopbackBus()


class TestLoopbackRouting:
    def test_publish_fans_out_to_every_subscriber(self, vbus):
        sched, bus = vbus
        pub = bus.client(sched, "pub")
        got1, got2 = [], []
        bus.client(sched, "s1").subscribe("S", lambda env: got1.append(env.payload))
        bus.client(sched, "s2").subscribe("S", lambda env: got2.append(env.payload))
        pub.publish("S", b"x")
        sched.run_pending()
        assert got1 == [b"x"] and got2 == [b"x"]

    def test_publish_without_subscribers_is_dropped(self, vbus):
        sched, bus = vbus
        bus.client(sched, "pub").publish("nobody", b"x")
        sched.run_pending()  # nothing to assert beyond "no error"

    def test_exact_match_only(self, vbus):
        sched, bus = vbus
        got = []
        bus.client(sched, "s").subscribe("S", lambda env: got.append(env))
        pub = bus.client(sched, "pub")
        pub.publish("S2", b"x")
        pub.publish("S_", b"x")
        sched.run_pending()
        assert got == []

    def test_self_delivery_loopback_allowed(self, vbus):
        sched, bus = vbus
        c = bus.client(sched, "c")
        got = []
        c.subscribe("S", lambda env: got.append(env.payload))
        c.publish("S", b"me")
        sched.run_pending()
        assert got == [b"me"]

    def test_no_replay_for_late_subscribers(self, vbus):
        sched, bus = vbus
        pub = bus.client(sched, "pub")
        pub.publish("S", b"early")
        sched.run_pending()
        got = []
        bus.client(sched, "late").subscribe("S", lambda env: got.append(env))
        sched.run_pending()
        assert got == []

    def test_unsubscribe_stops_delivery(self, vbus):
        sched, bus = vbus
        c = bus.client(sched, "c")
        got = []
        sub = c.subscribe("S", lambda env: got.append(env))
        pub = bus.client(sched, "pub")
        pub.publish("S", b"1")
        sched.run_pending()
        sub.cancel()
        pub.publish("S", b"2")
        sched.run_pending()
        assert len(got) == 1
        assert bus.subscription_count() == 0

    def test_per_sender_fifo(self, vbus):
        sched, bus = vbus
        pub = bus.client(sched, "pub")
        got = []
        bus.client(sched, "s").subscribe("S", lambda env: got.append(env.payload))
        for n in range(200):
            pub.publish("S", str(n).encode())
        sched.run_pending()
        assert got == [str(n).encode() for n in range(200)]

    def test_count_conservation_under_load(self, vbus):
        sched, bus = vbus
        pub = bus.client(sched, "pub")
        counts = [0, 0]
        bus.client(sched, "s1").subscribe("S", lambda env: counts.__setitem__(0, counts[0] + 1))
        bus.client(sched, "s2").subscribe("S", lambda env: counts.__setitem__(1, counts[1] + 1))
        for _ in range(10_000):
            pub.publish("S", b"x")
        sched.run_pending()
        assert counts == [10_000, 10_000]

    def test_disconnect_removes_subscriptions(self, vbus):
        sched, bus = vbus
        pub = bus.client(sched, "pub")
        got_alive, got_dead = [], []
        alive = bus.client(sched, "alive")
        dead = bus.client(sched, "dead")
        alive.subscribe("S", lambda env: got_alive.append(env))
        dead.subscribe("S", lambda env: got_dead.append(env))
        dead.close()
        pub.publish("S", b"x")
        sched.run_pending()
        assert len(got_alive) == 1 and got_dead == []

    def test_publish_after_close_raises(self, vbus):
        sched, bus = vbus
        c = bus.client(sched, "c")
        c.close()
        with pytest.raises(DisconnectedError):
            c.publish("S", b"x")


class TestLoopbackRequestReply:
    def test_request_gets_reply(self, vbus):
        sched, bus = vbus
        server = bus.client(sched, "server")
        server.subscribe("svc", lambda env: server.reply(env, b"pong:" + env.payload))
        got = []
        bus.client(sched, "caller").request("svc", b"ping", 1.0, got.append)
        sched.run_pending()
        assert got == [b"pong:ping"]

    def test_timeout_without_subscriber(self, vbus):
        sched, bus = vbus
        timed_out = []
        bus.client(sched, "caller").request(
            "void", b"x", 0.1, lambda p: pytest.fail("no reply expected"),
            on_timeout=lambda: timed_out.append(True),
        )
        sched.advance(0.099)
        assert timed_out == []
        sched.advance(0.002)
        assert timed_out == [True]

    def test_concurrent_requests_correlate(self, vbus):
        sched, bus = vbus
        server = bus.client(sched, "server")
        server.subscribe("svc", lambda env: server.reply(env, b"r:" + env.payload))
        got = {}
        caller = bus.client(sched, "caller")
        caller.request("svc", b"a", 1.0, lambda p: got.__setitem__("a", p))
        caller.request("svc", b"b", 1.0, lambda p: got.__setitem__("b", p))
        sched.run_pending()
        assert got == {"a": b"r:a", "b": b"r:b"}

    def test_duplicate_reply_dropped_first_wins(self, vbus):
        sched, bus = vbus
        server = bus.client(sched, "server")

        def reply_twice(env):
            server.reply(env, b"first")
            server.reply(env, b"second")

        server.subscribe("svc", reply_twice)
        got = []
        bus.client(sched, "caller").request("svc", b"x", 1.0, got.append)
        sched.run_pending()
        assert got == [b"first"]

    def test_reply_after_timeout_dropped_silently(self, vbus):
        sched, bus = vbus
        server = bus.client(sched, "server")
        held = []
        server.subscribe("svc", held.append)
        got, timed_out = [], []
        bus.client(sched, "caller").request(
            "svc", b"x", 0.05, got.append, on_timeout=lambda: timed_out.append(True)
        )
        sched.advance(0.1)
        assert timed_out == [True] and held
        server.reply(held[0], b"too-late")
        sched.run_pending()
        assert got == []

    def test_reply_to_non_request_refused(self, vbus):
        sched, bus = vbus
        c = bus.client(sched, "c")
        env = Envelope(subject="S", kind="publish", payload=b"x")
        with pytest.raises(ValueError):
            c.reply(env, b"y")


class TestEnvelopeFraming:
    def test_utf8_payload_round_trip(self):
        env = Envelope(subject="S", kind="request", payload=b'{"a":1}', correlation_id="c1")
        again = Envelope.from_frame(env.to_frame())
        assert again == env

    def test_binary_payload_round_trip(self):
        blob = bytes(range(256)) * 3
        env = Envelope(subject="S", kind="publish", payload=blob)
        frame = env.to_frame()
        assert "base64" in frame
        assert Envelope.from_frame(frame) == env


@pytest.fixture
def gateway():
    gw = BusGateway("127.0.0.1", 0)
    yield gw
    gw.close()


def ws_client(gateway, name="c"):
    sched = RealScheduler(f"bus-test-{name}")
    client = WsBusClient.connect(gateway.address, sched, name=name)
    return sched, client


class TestWsGateway:
    def test_pub_sub_across_real_sockets(self, gateway):
        s1, c1 = ws_client(gateway, "c1")
        s2, c2 = ws_client(gateway, "c2")
        got = []
        done = threading.Event()
        c2.subscribe("S", lambda env: (got.append(env.payload), done.set()))
        time.sleep(0.05)  # let the subscribe control frame land
        c1.publish("S", b"over-the-wire")
        assert done.wait(3.0)
        assert got == [b"over-the-wire"]
        c1.close(); c2.close(); s1.stop(); s2.stop()

    def test_blocking_send_request(self, gateway):
        s1, server = ws_client(gateway, "server")
        s2, caller = ws_client(gateway, "caller")
        server.subscribe("svc", lambda env: server.reply(env, b"pong"))
        time.sleep(0.05)
        assert caller.send_request("svc", b"ping", timeout=3.0) == b"pong"
        server.close(); caller.close(); s1.stop(); s2.stop()

    def test_send_request_timeout(self, gateway):
        s, caller = ws_client(gateway, "caller")
        t0 = time.monotonic()
        with pytest.raises(BusTimeoutError):
            caller.send_request("void", b"x", timeout=0.2)
        assert 0.15 <= time.monotonic() - t0 < 2.0
        caller.close(); s.stop()

    def test_large_payload_delivered_intact(self, gateway):
        s1, c1 = ws_client(gateway, "c1")
        s2, c2 = ws_client(gateway, "c2")
        got = []
        done = threading.Event()
        c2.subscribe("big", lambda env: (got.append(env.payload), done.set()))
        time.sleep(0.05)
        payload = (b"\xffbinary" + bytes(1024)) * 1024  # > 1 MiB, not UTF-8
        c1.publish("big", payload)
        assert done.wait(5.0)
        assert got[0] == payload
        c1.close(); c2.close(); s1.stop(); s2.stop()

    def test_disconnect_cleans_up_subscriptions(self, gateway):
        s1, c1 = ws_client(gateway, "c1")
        s2, c2 = ws_client(gateway, "c2")
        s3, c3 = ws_client(gateway, "c3")
        got2, got3 = [], []
        c2.subscribe("S", lambda env: got2.append(env))
        c3.subscribe("S", lambda env: got3.append(env))
        time.sleep(0.05)
        c3.close()
        time.sleep(0.05)
        done = threading.Event()
        c2.subscribe("S2", lambda env: done.set())
        time.sleep(0.02)
        c1.publish("S", b"x")
        c1.publish("S2", b"flush")
        assert done.wait(3.0)
        assert len(got2) == 1 and got3 == []
        with pytest.raises(DisconnectedError):
            c3.publish("S", b"x")
        c1.close(); c2.close(); s1.stop(); s2.stop(); s3.stop()

    def test_fifo_and_conservation_over_wire(self, gateway):
        s1, pub = ws_client(gateway, "pub")
        s2, sub = ws_client(gateway, "sub")
        got = []
        done = threading.Event()
        total = 2000

        def on_env(env):
            got.append(env.payload)
            if len(got) == total:
                done.set()

        sub.subscribe("S", on_env)
        time.sleep(0.05)
        for n in range(total):
            pub.publish("S", str(n).encode())
        assert done.wait(10.0)
        assert got == [str(n).encode() for n in range(total)]
        pub.close(); sub.close(); s1.stop(); s2.stop()

    def test_bind_error_on_occupied_port(self, gateway):
        with pytest.raises(BindError):
            BusGateway("127.0.0.1", gateway.port)

    def test_unreachable_bus(self):
        sched = RealScheduler("unreachable")
        with pytest.raises(BusUnreachableError):
            WsBusClient.connect("127.0.0.1:1", sched, name="x")
        sched.stop()
