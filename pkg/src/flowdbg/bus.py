"""Message-bus gateway and clients: publish, sendRequest, reply, subscribe.

Routing is exact-match on the envelope subject; a publish or request fans out
to every subscriber, replies travel back to the requester via correlationId,
and the first reply per correlation wins. Delivery is best-effort with no
persistence or replay.

Two transports share the routing core:

* `LoopbackBus` - an in-process hub. Handlers run as scheduler callbacks,
  so loopback topologies are fully deterministic under a VirtualScheduler.
* `BusGateway` / `WsBusClient` - the real thing: one JSON envelope
  `{subject, kind, correlationId?, payload}` per WebSocket text frame on the
  `/bus` endpoint. Binary payloads that are not UTF-8 ride base64-encoded
  with `payloadEncoding: "base64"`.

Subscription handlers run on their owner's scheduler and must not block it.
`send_request` blocks the calling thread and therefore must not be used from
scheduler callbacks; components use the callback form `request()` instead.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import threading
import uuid
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Optional

from websockets.exceptions import ConnectionClosed, InvalidURI, WebSocketException
from websockets.sync.client import connect as ws_connect
from websockets.sync.server import serve as ws_serve

log = logging.getLogger(__name__)

BUS_PATH = "/bus"
OUTBOUND_QUEUE_LIMIT = 10_000


class DisconnectedError(ConnectionError):
    """The client is no longer attached to a gateway."""


class BusUnreachableError(ConnectionError):
    """The gateway could not be reached at connect time."""


class BusTimeoutError(TimeoutError):
    """No reply arrived within the request timeout."""


class BindError(OSError):
    """The gateway listen address could not be bound."""


@dataclass
class Envelope:
    subject: str
    kind: str  # publish | request | reply
    payload: bytes
    correlation_id: Optional[str] = None

    def to_frame(self) -> str:
        doc = {"subject": self.subject, "kind": self.kind, "correlationId": self.correlation_id}
        try:
            doc["payload"] = self.payload.decode("utf-8")
        except UnicodeDecodeError:
            doc["payload"] = base64.b64encode(self.payload).decode("ascii")
            doc["payloadEncoding"] = "base64"
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_frame(cls, text: str) -> "Envelope":
        doc = json.loads(text)
        raw = doc.get("payload", "")
        if doc.get("payloadEncoding") == "base64":
            payload = base64.b64decode(raw)
        else:
            payload = raw.encode("utf-8")
        return cls(
            subject=doc["subject"],
            kind=doc.get("kind", "publish"),
            payload=payload,
            correlation_id=doc.get("correlationId"),
        )


class Subscription:
    """Handle returned by subscribe(); dropping it (cancel) stops delivery."""

    def __init__(self, owner, subject: str, handler: Callable):
        self._owner = owner
        self.subject = subject
        self.handler = handler
        self.active = True

    def cancel(self) -> None:
        if self.active:
            self.active = False
            self._owner._drop_subscription(self)


class _Hub:
    """Exact-match subject router shared by the loopback bus and the gateway."""

    def __init__(self):
        self._lock = threading.RLock()
        self._sinks: dict = {}  # client id -> callable(Envelope)
        self._subs: dict = defaultdict(dict)  # subject -> {client id: None} (ordered)
        self._pending: dict = {}  # correlation id -> requester client id

    def attach(self, client_id: str, sink: Callable) -> None:
        with self._lock:
            self._sinks[client_id] = sink

    def detach(self, client_id: str) -> None:
        with self._lock:
            self._sinks.pop(client_id, None)
            for members in self._subs.values():
                members.pop(client_id, None)
            self._pending = {c: r for c, r in self._pending.items() if r != client_id}

    def subscribe(self, client_id: str, subject: str) -> None:
        with self._lock:
            self._subs[subject][client_id] = None

    def unsubscribe(self, client_id: str, subject: str) -> None:
        with self._lock:
            self._subs.get(subject, {}).pop(client_id, None)

    def route(self, sender_id: str, env: Envelope) -> None:
        if env.kind == "reply":
            if not env.correlation_id:
                log.warning("reply without correlationId dropped")
                return
            with self._lock:
                requester = self._pending.pop(env.correlation_id, None)
                sink = self._sinks.get(requester) if requester else None
            if sink is None:
                log.debug("reply %s dropped (duplicate or requester gone)", env.correlation_id)
                return
            sink(env)
            return
        if env.kind == "request":
            if not env.correlation_id:
                log.warning("request without correlationId dropped")
                return
            with self._lock:
                self._pending[env.correlation_id] = sender_id
        with self._lock:
            sinks = [self._sinks[cid] for cid in self._subs.get(env.subject, ()) if cid in self._sinks]
        for sink in sinks:
            sink(env)

    def subscription_count(self) -> int:
        with self._lock:
            return sum(len(m) for m in self._subs.values())


class _PendingRequests:
    """Per-client correlation table for in-flight requests."""

    def __init__(self, scheduler):
        self._scheduler = scheduler
        self._lock = threading.Lock()
        self._entries: dict = {}

    def add_async(self, corr: str, timeout: float, on_reply, on_timeout) -> None:
        timer = self._scheduler.call_later(timeout, self._timed_out, corr)
        with self._lock:
            self._entries[corr] = ("async", on_reply, on_timeout, timer)

    def add_blocking(self, corr: str):
        event = threading.Event()
        slot: list = []
        with self._lock:
            self._entries[corr] = ("blocking", event, slot, None)
        return event, slot

    def discard(self, corr: str) -> None:
        with self._lock:
            entry = self._entries.pop(corr, None)
        if entry and entry[3] is not None:
            entry[3].cancel()

    def resolve(self, corr: str, payload: bytes) -> None:
        with self._lock:
            entry = self._entries.pop(corr, None)
        if entry is None:
            log.debug("late or duplicate reply %s dropped", corr)
            return
        kind, a, b, timer = entry
        if timer is not None:
            timer.cancel()
        if kind == "async":
            self._scheduler.call_soon(a, payload)
        else:
            b.append(payload)
            a.set()

    def _timed_out(self, corr: str) -> None:
        with self._lock:
            entry = self._entries.pop(corr, None)
        if entry is None:
            return
        kind, a, b, _timer = entry
        if kind == "async" and b is not None:
            b()
        elif kind == "blocking":
            a.set()

    def fail_all(self) -> None:
        with self._lock:
            entries = list(self._entries.values())
            self._entries.clear()
        for kind, a, b, timer in entries:
            if timer is not None:
                timer.cancel()
            if kind == "async":
                if b is not None:
                    self._scheduler.call_soon(b)
            else:
                a.set()


class _ClientBase:
    """Shared publish/request/reply/subscribe machinery for both transports."""

    def __init__(self, scheduler, name: str):
        self._scheduler = scheduler
        self.name = name
        self._pending = _PendingRequests(scheduler)
        self._handlers: dict = defaultdict(list)  # subject -> [Subscription]
        self._handlers_lock = threading.Lock()
        self._closed = False

    # transport hooks -------------------------------------------------------
    def _send(self, env: Envelope) -> None:
        raise NotImplementedError

    def _register_subject(self, subject: str) -> None:
        raise NotImplementedError

    def _unregister_subject(self, subject: str) -> None:
        raise NotImplementedError

    # public API -------------------------------------------------------------
    def publish(self, subject: str, payload: bytes) -> None:
        self._ensure_open()
        self._send(Envelope(subject=subject, kind="publish", payload=payload))

    def request(self, subject: str, payload: bytes, timeout: float,
                on_reply: Callable[[bytes], None],
                on_timeout: Optional[Callable[[], None]] = None) -> str:
        """Fire-and-callback form of sendRequest; safe from scheduler callbacks."""
        self._ensure_open()
        corr = uuid.uuid4().hex
        self._pending.add_async(corr, timeout, on_reply, on_timeout)
        try:
            self._send(Envelope(subject=subject, kind="request", payload=payload,
                                correlation_id=corr))
        except Exception:
            self._pending.discard(corr)
            raise
        return corr

    def send_request(self, subject: str, payload: bytes, timeout: float) -> bytes:
        """Blocking sendRequest; must not be called from the scheduler thread."""
        self._ensure_open()
        if getattr(self._scheduler, "in_callback", False):
            raise RuntimeError("send_request would deadlock the scheduler; use request()")
        corr = uuid.uuid4().hex
        event, slot = self._pending.add_blocking(corr)
        self._send(Envelope(subject=subject, kind="request", payload=payload,
                            correlation_id=corr))
        if not event.wait(timeout) or not slot:
            self._pending.discard(corr)
            if self._closed:
                raise DisconnectedError(self.name)
            raise BusTimeoutError(f"no reply on {subject!r} within {timeout}s")
        return slot[0]

    def reply(self, request_env: Envelope, payload: bytes) -> None:
        self._ensure_open()
        if request_env.kind != "request":
            raise ValueError("can only reply to request envelopes")
        self._send(Envelope(subject=request_env.subject, kind="reply", payload=payload,
                            correlation_id=request_env.correlation_id))

    def subscribe(self, subject: str, handler: Callable[[Envelope], None]) -> Subscription:
        self._ensure_open()
        sub = Subscription(self, subject, handler)
        with self._handlers_lock:
            first = not self._handlers[subject]
            self._handlers[subject].append(sub)
        if first:
            self._register_subject(subject)
        return sub

    def _drop_subscription(self, sub: Subscription) -> None:
        with self._handlers_lock:
            subs = self._handlers.get(sub.subject, [])
            if sub in subs:
                subs.remove(sub)
            empty = not subs
            if empty:
                self._handlers.pop(sub.subject, None)
        if empty and not self._closed:
            try:
                self._unregister_subject(sub.subject)
            except DisconnectedError:
                pass

    def subscription_count(self) -> int:
        with self._handlers_lock:
            return sum(len(s) for s in self._handlers.values())

    # inbound ----------------------------------------------------------------
    def _dispatch(self, env: Envelope) -> None:
        if env.kind == "reply":
            self._pending.resolve(env.correlation_id, env.payload)
            return
        with self._handlers_lock:
            subs = list(self._handlers.get(env.subject, ()))
        for sub in subs:
            if sub.active:
                self._scheduler.call_soon(self._invoke, sub, env)

    @staticmethod
    def _invoke(sub: Subscription, env: Envelope) -> None:
        if not sub.active:
            return
        try:
            sub.handler(env)
        except Exception:
            log.exception("subscription handler failed on %s", env.subject)

    def _ensure_open(self) -> None:
        if self._closed:
            raise DisconnectedError(self.name)


# --- in-process loopback ------------------------------------------------------


class LoopbackClient(_ClientBase):
    def __init__(self, hub: _Hub, scheduler, name: str):
        super().__init__(scheduler, name)
        self._hub = hub
        self._id = f"{name}:{uuid.uuid4().hex[:8]}"
        hub.attach(self._id, self._dispatch)

    def _send(self, env: Envelope) -> None:
        self._hub.route(self._id, env)

    def _register_subject(self, subject: str) -> None:
        self._hub.subscribe(self._id, subject)

    def _unregister_subject(self, subject: str) -> None:
        self._hub.unsubscribe(self._id, subject)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._hub.detach(self._id)
        self._pending.fail_all()


class LoopbackBus:
    """In-process gateway with identical routing semantics to the WS bus."""

    def __init__(self):
        self._hub = _Hub()

    def client(self, scheduler, name: str = "client") -> LoopbackClient:
        return LoopbackClient(self._hub, scheduler, name)

    def subscription_count(self) -> int:
        return self._hub.subscription_count()


# --- WebSocket gateway ----------------------------------------------------------


class BusGateway:
    """Serves the bus protocol over WebSocket at ws://host:port/bus."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._hub = _Hub()
        self._conns: set = set()
        self._conns_lock = threading.Lock()
        try:
            self._server = ws_serve(self._handle, host, port, compression=None, max_size=None)
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self.host, self.port = self._server.socket.getsockname()[:2]
        self._thread = threading.Thread(
            target=self._server.serve_forever, name=f"bus-gateway:{self.port}", daemon=True
        )
        self._thread.start()
        log.info("bus gateway listening on ws://%s:%s%s", self.host, self.port, BUS_PATH)

    @property
    def address(self) -> str:
        return f"ws://{self.host}:{self.port}{BUS_PATH}"

    def subscription_count(self) -> int:
        return self._hub.subscription_count()

    def close(self) -> None:
        self._server.shutdown()
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.close()
            except Exception:
                pass
        self._thread.join(timeout=5.0)

    def _handle(self, conn) -> None:
        if conn.request.path != BUS_PATH:
            conn.close(code=1008, reason=f"unknown endpoint {conn.request.path}")
            return
        client_id = uuid.uuid4().hex
        outbound: queue.Queue = queue.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        with self._conns_lock:
            self._conns.add(conn)

        def sink(env: Envelope) -> None:
            try:
                outbound.put_nowait(env.to_frame())
            except queue.Full:
                log.warning("outbound queue full for %s; envelope on %s dropped",
                            client_id, env.subject)

        sender = threading.Thread(
            target=self._send_loop, args=(conn, outbound), name=f"bus-send:{client_id[:8]}",
            daemon=True,
        )
        sender.start()
        self._hub.attach(client_id, sink)
        try:
            for message in conn:
                if isinstance(message, bytes):
                    message = message.decode("utf-8")
                self._handle_frame(client_id, message)
        except ConnectionClosed:
            pass
        except Exception:
            log.exception("gateway connection %s failed", client_id)
        finally:
            self._hub.detach(client_id)
            outbound.put(None)
            with self._conns_lock:
                self._conns.discard(conn)

    def _handle_frame(self, client_id: str, text: str) -> None:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            log.warning("unparseable frame from %s dropped", client_id)
            return
        control = doc.get("control")
        if control == "subscribe":
            self._hub.subscribe(client_id, doc["subject"])
            return
        if control == "unsubscribe":
            self._hub.unsubscribe(client_id, doc["subject"])
            return
        try:
            env = Envelope.from_frame(text)
        except (KeyError, ValueError):
            log.warning("malformed envelope from %s dropped", client_id)
            return
        self._hub.route(client_id, env)

    @staticmethod
    def _send_loop(conn, outbound: queue.Queue) -> None:
        while True:
            frame = outbound.get()
            if frame is None:
                return
            try:
                conn.send(frame)
            except (ConnectionClosed, OSError):
                return


def serve_gateway(listen: str) -> BusGateway:
    """Start a gateway on 'host:port'."""
    host, _, port = listen.rpartition(":")
    return BusGateway(host or "127.0.0.1", int(port))


class WsBusClient(_ClientBase):
    """Bus client over a persistent WebSocket connection."""

    def __init__(self, conn, scheduler, name: str):
        super().__init__(scheduler, name)
        self._conn = conn
        self._send_lock = threading.Lock()
        self._recv_thread = threading.Thread(
            target=self._recv_loop, name=f"bus-recv:{name}", daemon=True
        )
        self._recv_thread.start()

    @classmethod
    def connect(cls, address: str, scheduler, name: str = "client") -> "WsBusClient":
        url = normalize_bus_url(address)
        try:
            conn = ws_connect(url, compression=None, max_size=None, open_timeout=5)
        except (OSError, WebSocketException, InvalidURI, ValueError) as exc:
            raise BusUnreachableError(f"cannot reach bus at {url}: {exc}") from exc
        return cls(conn, scheduler, name)

    def _send(self, env: Envelope) -> None:
        self._send_frame(env.to_frame())

    def _register_subject(self, subject: str) -> None:
        self._send_frame(json.dumps({"control": "subscribe", "subject": subject}))

    def _unregister_subject(self, subject: str) -> None:
        self._send_frame(json.dumps({"control": "unsubscribe", "subject": subject}))

    def _send_frame(self, frame: str) -> None:
        try:
            with self._send_lock:
                self._conn.send(frame)
        except (ConnectionClosed, OSError) as exc:
            self._closed = True
            raise DisconnectedError(str(exc)) from exc

    def _recv_loop(self) -> None:
        try:
            for message in self._conn:
                if isinstance(message, bytes):
                    message = message.decode("utf-8")
                try:
                    env = Envelope.from_frame(message)
                except (KeyError, ValueError):
                    log.warning("malformed envelope from gateway dropped")
                    continue
                self._dispatch(env)
        except ConnectionClosed:
            pass
        except Exception:
            log.exception("bus client %s receive loop failed", self.name)
        finally:
            self._closed = True
            self._pending.fail_all()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._conn.close()
        except Exception:
            pass
        self._pending.fail_all()


def normalize_bus_url(address: str) -> str:
    if address.startswith(("ws://", "wss://")):
        base = address
    else:
        base = f"ws://{address}"
    scheme, rest = base.split("://", 1)
    if "/" not in rest:
        rest += BUS_PATH
    return f"{scheme}://{rest}"
