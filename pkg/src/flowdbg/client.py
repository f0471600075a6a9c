"""MES-side debug client: discovery, link upkeep, sessions, and the frontend API.

One DebugClient is a state machine for one (workflow, selected controller)
pair. Bus traffic, timer ticks, and frontend commands are all serialized onto
the client's scheduler; every command applies atomically and produces events:

* stateChanged - full state snapshot (the UI derives all flags from this)
* catalogChanged - discovered controller instances
* linkChanged - connection to the selected controller went up or down
* breakpointTriggered - a breakpoint entry is now displayed
* replayPosition - profiler replay cursor moved
* commandRejected / startTimeout / stopTimeout - operator feedback

Commands (frontend -> client): selectWorkflow, selectAci, setMode, start,
stop, resume, editBreakpoint, replayStep, discardReplay, mockInject.

The same command surface drives the browser UI over the `/frontend` WebSocket
and the headless scenario harness in-process.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from websockets.sync.server import serve as ws_serve

from . import protocol as proto
from .agent import compute_availability
from .bus import Envelope
from .engine import Engine, HookEvent, HookSide, Verdict
from .protocol import (
    AfterSetInputs,
    AvailableACIRequest,
    AvailableACIRequestResponse,
    BeforeSetOutputs,
    BreakpointChange,
    BreakpointDefinition,
    BreakpointToggle,
    CheckWorkflowRunning,
    CheckWorkflowRunningResponse,
    CommunicationAttempt,
    CommunicationStarted,
    DebugMode,
    DebugSessionInfoEntry,
    DebugStarted,
    DebugStopped,
    PortSide,
    ReceivedExecutionContext,
    SessionRenewal,
    StartDebug,
    StopDebug,
    subscription_subject,
)
from .runtime import VirtualScheduler
from .values import VariableValue
from .workflow import WorkflowDefinition

log = logging.getLogger(__name__)

FRONTEND_PATH = "/frontend"


class ProtocolStateError(RuntimeError):
    """The command is not legal in the client's current state."""


class RefusedInMode(ProtocolStateError):
    """Breakpoint edits are locked while snapshot/profiler state is live."""


@dataclass
class ClientConfig:
    mes_id: str
    workflows: dict  # workflow id -> WorkflowDefinition
    aci_request_interval: float = 30.0
    comm_attempt_interval: float = 10.0
    auto_select_window: float = 5.0
    aci_entry_expiry: float = 30.0
    request_timeout: float = 3.0


@dataclass
class AciCatalogEntry:
    aci_id: str
    running: bool
    last_seen: float


def _port_side(side: HookSide) -> PortSide:
    return PortSide.OUTPUT if side is HookSide.BEFORE_SET_OUTPUTS else PortSide.INPUT


class DebugClient:
    """Debugger-page backend; see module docstring for the command surface."""

    def __init__(self, bus, scheduler, config: ClientConfig, *, own_bus: bool = True):
        if "_" in config.mes_id:
            raise ValueError("MES instance id may not contain '_'")
        self._bus = bus
        self._scheduler = scheduler
        self._config = config
        self._own_bus = own_bus
        self._listeners: list = []

        self._phase = "idle"  # idle|discovering|linked|debugging|replaying
        self._workflow_id: Optional[str] = None
        self._mode = DebugMode.SYNCHRONOUS
        self._selected_aci: Optional[str] = None
        self._link_status = "unknown"  # unknown|up|down
        self._workflow_running = False
        self._last_sessions: list = []
        self._workflow_available = False
        self._breakpoints: list = []
        self._catalog: dict = {}

        self._session_id: Optional[str] = None
        self._sync_reply_env: Optional[Envelope] = None
        self._pending_queue: deque = deque()  # snapshot: head is displayed
        self._triggered: Optional[DebugSessionInfoEntry] = None
        self._chosen_context: Optional[str] = None
        self._session_stopped = False  # snapshot stopped but queue not drained
        self._protocol_violation = False
        self._replay_registry: Optional[list] = None
        self._replay_cursor: Optional[int] = None
        self._view_values: dict = {}  # "task.port/side" -> value json
        self._active_context: Optional[str] = None

        self._mock_engine: Optional[Engine] = None
        self._mock_suspended = False
        self._mock_seq = 0

        self._timers: dict = {}
        self._base_subs: list = []
        self._wf_subs: list = []
        self._link_subs: list = []
        self._session_subs: list = []
        self._started = False
        self._stopped = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> "DebugClient":
        if self._started:
            return self
        self._started = True
        self._base_subs.append(
            self._bus.subscribe(
                subscription_subject(CommunicationStarted), self._on_communication_started
            )
        )
        return self

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        for name in list(self._timers):
            self._cancel_timer(name)
        for subs in (self._session_subs, self._link_subs, self._wf_subs, self._base_subs):
            for sub in subs:
                sub.cancel()
            subs.clear()
        if self._mock_engine is not None:
            self._mock_engine.stop()
            self._mock_engine = None
        if self._own_bus:
            self._bus.close()

    # -- frontend API -------------------------------------------------------------

    def add_listener(self, fn: Callable[[dict], None]) -> None:
        self._listeners.append(fn)

    def remove_listener(self, fn) -> None:
        if fn in self._listeners:
            self._listeners.remove(fn)

    def handle_command(self, cmd: dict) -> None:
        """Apply one frontend command on the client loop (thread-safe)."""
        self._scheduler.call_soon(self._apply_command, dict(cmd))

    def _apply_command(self, cmd: dict) -> None:
        name = cmd.get("cmd")
        handlers = {
            "selectWorkflow": lambda: self.select_workflow(cmd["workflowId"]),
            "selectAci": lambda: self.select_aci(cmd["aciId"]),
            "setMode": lambda: self.set_mode(DebugMode(cmd["mode"])),
            "start": self.request_start_debug,
            "stop": self.request_stop_debug,
            "resume": self.resume,
            "editBreakpoint": lambda: self.edit_breakpoint(
                cmd["action"], proto.breakpoint_from_json(cmd["breakpoint"])
            ),
            "replayStep": lambda: self.replay_step(cmd.get("direction", "next")),
            "discardReplay": self.discard_replay,
            "mockInject": lambda: self.mock_inject(
                cmd["taskId"], cmd["portId"], VariableValue.from_json(cmd["value"])
            ),
        }
        handler = handlers.get(name)
        if handler is None:
            self._emit({"type": "commandRejected", "cmd": name, "reason": "unknown command"})
            return
        try:
            handler()
        except ProtocolStateError as exc:
            self._emit({"type": "commandRejected", "cmd": name, "reason": str(exc)})
        except Exception as exc:
            log.exception("command %s failed", name)
            self._emit({"type": "commandRejected", "cmd": name, "reason": f"internal: {exc}"})

    def _emit(self, event: dict) -> None:
        for fn in list(self._listeners):
            try:
                fn(event)
            except Exception:
                log.exception("frontend listener failed")

    def _emit_state(self) -> None:
        self._emit({"type": "stateChanged", "state": self.snapshot()})

    def _emit_catalog(self) -> None:
        self._emit({"type": "catalogChanged", "catalog": self.catalog_json()})

    def snapshot(self) -> dict:
        replay = None
        if self._replay_registry is not None:
            replay = {
                "length": len(self._replay_registry),
                "cursor": self._replay_cursor,
                "entries": [proto.entry_to_json(e) for e in self._replay_registry],
            }
        workflow = None
        if self._workflow_id is not None:
            workflow = self._config.workflows[self._workflow_id].to_json()
        return {
            "mesId": self._config.mes_id,
            "phase": self._phase,
            "workflowId": self._workflow_id,
            "workflow": workflow,
            "mode": self._mode.value,
            "selectedAci": self._selected_aci,
            "linkStatus": self._link_status,
            "workflowRunning": self._workflow_running,
            "workflowAvailable": self._workflow_available,
            "sessionId": self._session_id,
            "sessionStopped": self._session_stopped,
            "breakpoints": [proto.breakpoint_to_json(bp) for bp in self._breakpoints],
            "triggered": None if self._triggered is None else proto.entry_to_json(self._triggered),
            "queueLength": len(self._pending_queue),
            "chosenContext": self._chosen_context,
            "protocolViolation": self._protocol_violation,
            "replay": replay,
            "view": {"ports": dict(self._view_values), "activeContext": self._active_context},
        }

    def catalog_json(self) -> list:
        now = self._scheduler.now()
        return [
            {"aciId": e.aci_id, "running": e.running, "ageS": round(now - e.last_seen, 3)}
            for e in sorted(self._catalog.values(), key=lambda e: e.aci_id)
        ]

    def replay_registry(self) -> Optional[list]:
        """The received profiler registry as JSON entries, if replaying."""
        if self._replay_registry is None:
            return None
        return [proto.entry_to_json(e) for e in self._replay_registry]

    # -- timers ---------------------------------------------------------------------

    def _arm_timer(self, name: str, delay: float, fn) -> None:
        self._cancel_timer(name)
        self._timers[name] = self._scheduler.call_later(delay, fn)

    def _cancel_timer(self, name: str) -> None:
        timer = self._timers.pop(name, None)
        if timer is not None:
            timer.cancel()

    # -- workflow selection and discovery ----------------------------------------------

    def select_workflow(self, workflow_id: str) -> None:
        if workflow_id not in self._config.workflows:
            raise ProtocolStateError(f"unknown workflow {workflow_id!r}")
        self._teardown_link("workflow-switch")
        for sub in self._wf_subs:
            sub.cancel()
        self._wf_subs.clear()
        self._workflow_id = workflow_id
        self._catalog.clear()
        self._phase = "discovering"
        self._wf_subs.append(
            self._bus.subscribe(
                subscription_subject(AvailableACIRequestResponse, workflow_id),
                self._on_aci_response,
            )
        )
        self._discovery_tick()
        self._emit_catalog()
        self._emit_state()

    def workflow_definition(self) -> WorkflowDefinition:
        if self._workflow_id is None:
            raise ProtocolStateError("no workflow selected")
        return self._config.workflows[self._workflow_id]

    def _discovery_tick(self) -> None:
        if self._stopped or self._workflow_id is None:
            return
        self._arm_timer("discovery", self._config.aci_request_interval, self._discovery_tick)
        self._expire_catalog()
        try:
            self._publish(AvailableACIRequest(workflow_id=self._workflow_id))
        except ConnectionError as exc:
            log.warning("client %s: discovery publish failed: %s", self._config.mes_id, exc)
        if self._phase == "discovering":
            self._arm_timer("autoselect", self._config.auto_select_window, self._auto_select_check)

    def _expire_catalog(self) -> None:
        now = self._scheduler.now()
        stale = [
            aci
            for aci, e in self._catalog.items()
            if now - e.last_seen > self._config.aci_entry_expiry
        ]
        for aci in stale:
            del self._catalog[aci]
        if stale:
            self._emit_catalog()

    def _on_aci_response(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or msg.workflow_id != self._workflow_id:
            return
        self._catalog[msg.aci_id] = AciCatalogEntry(msg.aci_id, msg.running, self._scheduler.now())
        self._emit_catalog()

    def _auto_select_check(self) -> None:
        if self._phase != "discovering":
            return
        self._expire_catalog()
        running = [e for e in self._catalog.values() if e.running]
        if len(running) == 1:
            self._select_aci(running[0].aci_id, auto=True)
        # several candidates stay surfaced in the catalog for the user to pick

    def select_aci(self, aci_id: str) -> None:
        if self._phase not in ("discovering", "linked"):
            raise ProtocolStateError(f"cannot select a controller while {self._phase}")
        entry = self._catalog.get(aci_id)
        if entry is None or not entry.running:
            raise ProtocolStateError(f"controller {aci_id!r} is not running the workflow")
        if self._selected_aci is not None:
            self._teardown_link("reselect")
            self._phase = "discovering"
        self._select_aci(aci_id, auto=False)

    def _select_aci(self, aci_id: str, auto: bool) -> None:
        self._cancel_timer("autoselect")
        self._selected_aci = aci_id
        self._phase = "linked"
        self._link_status = "unknown"
        wf, mes = self._workflow_id, self._config.mes_id
        self._link_subs.append(
            self._bus.subscribe(
                subscription_subject(CheckWorkflowRunningResponse, aci_id, wf),
                self._on_check_response,
            )
        )
        self._link_subs.append(
            self._bus.subscribe(
                subscription_subject(DebugStarted, mes, aci_id, wf), self._on_debug_started
            )
        )
        log.info("client %s: selected controller %s (%s)", mes, aci_id, "auto" if auto else "user")
        self._comm_tick()
        self._emit_state()

    def _teardown_link(self, reason: str) -> None:
        if self._session_id is not None or self._phase == "debugging":
            self._clear_session_local(reason)
        self._cancel_timer("comm")
        self._cancel_timer("autoselect")
        for sub in self._link_subs:
            sub.cancel()
        self._link_subs.clear()
        self._selected_aci = None
        self._link_status = "unknown"
        self._workflow_running = False
        self._last_sessions = []
        self._workflow_available = False
        self._discard_replay_state()

    # -- link maintenance ---------------------------------------------------------------

    def _comm_tick(self) -> None:
        if self._stopped or self._selected_aci is None:
            return
        self._arm_timer("comm", self._config.comm_attempt_interval, self._comm_tick)
        attempt = CommunicationAttempt(aci_id=self._selected_aci)
        try:
            self._bus.request(
                proto.subject_of(attempt),
                proto.payload_bytes(attempt),
                timeout=self._config.request_timeout,
                on_reply=self._comm_ok,
                on_timeout=self._comm_fail,
            )
        except ConnectionError:
            self._comm_fail()

    def _comm_ok(self, _payload: bytes) -> None:
        if self._selected_aci is None:
            return
        if self._link_status != "up":
            self._link_status = "up"
            self._emit({"type": "linkChanged", "status": "up"})
            self._emit_state()
        check = CheckWorkflowRunning(
            aci_id=self._selected_aci,
            workflow_id=self._workflow_id,
            session_id=self._session_id,
        )
        self._publish(check)
        if self._session_id is not None:
            self._publish(
                SessionRenewal(aci_id=self._selected_aci, session_id=self._session_id)
            )

    def _comm_fail(self) -> None:
        if self._selected_aci is None:
            return
        went_down = self._link_status != "down"
        self._link_status = "down"
        self._workflow_running = False
        self._last_sessions = []
        self._recompute_availability()
        if self._session_id is not None or self._phase == "debugging":
            self._clear_session_local("link-down")
        if went_down:
            self._emit({"type": "linkChanged", "status": "down"})
            self._emit_state()

    def _on_communication_started(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or msg.aci_id != self._selected_aci:
            return
        log.info("client %s: controller %s announced itself; re-probing", self._config.mes_id, msg.aci_id)
        self._comm_tick()

    def _on_check_response(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or msg.workflow_id != self._workflow_id:
            return
        self._workflow_running = msg.running
        self._last_sessions = msg.sessions
        self._recompute_availability()

    def _recompute_availability(self) -> None:
        if self._mode is DebugMode.MOCK:
            available = self._workflow_id is not None
        else:
            available = self._workflow_running and compute_availability(
                self._last_sessions, self._mode
            )
        if available != self._workflow_available:
            self._workflow_available = available
            self._emit_state()

    # -- mode and session lifecycle ----------------------------------------------------------

    def set_mode(self, mode: DebugMode) -> None:
        if self._phase == "debugging":
            raise ProtocolStateError("stop the active session before changing mode")
        self._mode = mode
        self._recompute_availability()
        self._emit_state()

    def request_start_debug(self) -> None:
        if self._mode is DebugMode.MOCK:
            self._start_mock()
            return
        if self._phase != "linked":
            raise ProtocolStateError(f"cannot start while {self._phase}")
        if self._link_status != "up" or not self._workflow_available:
            raise ProtocolStateError("workflow is not available for this mode")
        msg = StartDebug(
            aci_id=self._selected_aci,
            mes_id=self._config.mes_id,
            workflow_id=self._workflow_id,
            debug_mode=self._mode,
            breakpoints=[
                BreakpointDefinition(b.task_id, b.port_id, b.side, b.enabled)
                for b in self._breakpoints
            ],
        )
        self._publish(msg)
        self._arm_timer("start", self._config.request_timeout, self._start_timed_out)

    def _start_timed_out(self) -> None:
        log.warning("client %s: StartDebug got no DebugStarted in time", self._config.mes_id)
        self._emit({"type": "startTimeout"})

    def _on_debug_started(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or self._session_id is not None or self._phase != "linked":
            return
        self._cancel_timer("start")
        self._session_id = msg.session_id
        self._phase = "debugging"
        self._session_stopped = False
        self._protocol_violation = False
        self._chosen_context = None
        self._pending_queue.clear()
        self._reset_view()
        aci, sid = self._selected_aci, msg.session_id
        self._session_subs.append(
            self._bus.subscribe(
                subscription_subject(BeforeSetOutputs, aci, sid), self._on_notification
            )
        )
        self._session_subs.append(
            self._bus.subscribe(
                subscription_subject(AfterSetInputs, aci, sid), self._on_notification
            )
        )
        self._session_subs.append(
            self._bus.subscribe(
                subscription_subject(DebugStopped, aci, sid), self._on_debug_stopped
            )
        )
        log.info("client %s: session %s started (%s)", self._config.mes_id, sid, self._mode.value)
        self._emit_state()

    def request_stop_debug(self) -> None:
        if self._mock_engine is not None:
            self._stop_mock()
            return
        if self._session_id is None:
            raise ProtocolStateError("no active session")
        self._publish(StopDebug(aci_id=self._selected_aci, session_id=self._session_id))
        self._arm_timer("stop", self._config.request_timeout, self._stop_timed_out)

    def _stop_timed_out(self) -> None:
        log.warning("client %s: StopDebug got no DebugStopped; clearing locally", self._config.mes_id)
        self._emit({"type": "stopTimeout"})
        self._clear_session_local("stop-timeout")
        self._emit_state()

    def _on_debug_stopped(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or msg.session_id != self._session_id:
            return
        self._cancel_timer("stop")
        mode = self._mode
        if mode is DebugMode.SYNCHRONOUS:
            self._clear_session_local("stopped")
        elif mode is DebugMode.SNAPSHOT:
            if self._pending_queue:
                # entries stay steppable until the last promise is resumed
                self._session_stopped = True
                self._drop_session_subs()
                self._session_id = None
            else:
                self._clear_session_local("stopped")
        else:  # profiler -> replay mode
            registry = msg.registry
            self._drop_session_subs()
            self._session_id = None
            self._chosen_context = None
            self._phase = "replaying"
            self._replay_registry = registry
            self._replay_cursor = 0 if registry else None
            if registry:
                self._show_entry(registry[0])
            self._emit_replay_position()
        self._emit_state()

    def _clear_session_local(self, reason: str) -> None:
        self._cancel_timer("start")
        self._cancel_timer("stop")
        self._drop_session_subs()
        if self._sync_reply_env is not None:
            self._sync_reply_env = None  # agent side resumes via stop or sweep
        self._session_id = None
        self._pending_queue.clear()
        self._triggered = None
        self._chosen_context = None
        self._session_stopped = False
        self._protocol_violation = False
        self._reset_view()
        if self._mock_engine is not None:
            self._mock_engine.stop()
            self._mock_engine = None
            self._mock_suspended = False
        if self._phase == "debugging":
            self._phase = "linked" if self._selected_aci else (
                "discovering" if self._workflow_id else "idle"
            )
        log.info("client %s: session state cleared (%s)", self._config.mes_id, reason)

    def _drop_session_subs(self) -> None:
        for sub in self._session_subs:
            sub.cancel()
        self._session_subs.clear()

    def _discard_replay_state(self) -> None:
        self._replay_registry = None
        self._replay_cursor = None
        if self._phase == "replaying":
            self._phase = "linked" if self._selected_aci else (
                "discovering" if self._workflow_id else "idle"
            )

    # -- notifications -------------------------------------------------------------------

    def _on_notification(self, env: Envelope) -> None:
        msg = self._decode(env)
        if msg is None or msg.session_id != self._session_id:
            return
        entry = msg.registry_entry
        if self._mode is DebugMode.SYNCHRONOUS:
            if self._sync_reply_env is not None:
                self._protocol_violation = True
                log.warning(
                    "client %s: second synchronous notification before resume", self._config.mes_id
                )
                self._emit_state()
                return
            self._sync_reply_env = env
            self._display(entry)
        elif self._mode is DebugMode.SNAPSHOT:
            if self._chosen_context is None:
                self._chosen_context = entry.context_id
                self._publish(
                    ReceivedExecutionContext(
                        aci_id=self._selected_aci,
                        workflow_id=self._workflow_id,
                        session_id=self._session_id,
                        execution_context=entry.context_id,
                    )
                )
            elif entry.context_id != self._chosen_context:
                log.debug("client %s: foreign-context entry ignored", self._config.mes_id)
                return
            self._pending_queue.append(entry)
            if len(self._pending_queue) == 1:
                self._display(entry)
            else:
                self._emit_state()
        else:
            log.warning("client %s: unexpected notification in %s mode",
                        self._config.mes_id, self._mode.value)

    def _display(self, entry: DebugSessionInfoEntry) -> None:
        self._triggered = entry
        self._show_entry(entry)
        self._emit({"type": "breakpointTriggered", "entry": proto.entry_to_json(entry)})
        self._emit_state()

    def _show_entry(self, entry: DebugSessionInfoEntry) -> None:
        key = f"{entry.task_id}.{entry.port_id}/{entry.side.value}"
        self._view_values[key] = entry.value.to_json()
        self._active_context = entry.context_id

    def _reset_view(self) -> None:
        self._view_values.clear()
        self._active_context = None

    def resume(self) -> None:
        if self._mock_engine is not None:
            if self._mock_suspended:
                self._mock_suspended = False
                self._triggered = None
                self._mock_engine.resume()
                self._emit_state()
            return
        if self._mode is DebugMode.SYNCHRONOUS:
            if self._sync_reply_env is None:
                return
            env, self._sync_reply_env = self._sync_reply_env, None
            try:
                self._bus.reply(env, b"{}")
            except ConnectionError as exc:
                log.warning("client %s: resume reply failed: %s", self._config.mes_id, exc)
            self._triggered = None
            self._emit_state()
            return
        if self._mode is DebugMode.SNAPSHOT:
            if not self._pending_queue:
                return
            self._pending_queue.popleft()
            if self._pending_queue:
                self._display(self._pending_queue[0])
            else:
                self._triggered = None
                if self._session_stopped:
                    self._clear_session_local("drained")
                self._emit_state()

    # -- replay ----------------------------------------------------------------------------

    def replay_step(self, direction: str) -> None:
        if self._phase != "replaying":
            raise ProtocolStateError("not in replay mode")
        if self._replay_cursor is None:
            return
        cursor = self._replay_cursor + (1 if direction == "next" else -1)
        if not 0 <= cursor < len(self._replay_registry):
            return  # stepping past either end is a no-op
        self._replay_cursor = cursor
        self._show_entry(self._replay_registry[cursor])
        self._emit_replay_position()
        self._emit_state()

    def _emit_replay_position(self) -> None:
        entry = None
        if self._replay_registry and self._replay_cursor is not None:
            entry = proto.entry_to_json(self._replay_registry[self._replay_cursor])
        self._emit(
            {
                "type": "replayPosition",
                "cursor": self._replay_cursor,
                "length": 0 if self._replay_registry is None else len(self._replay_registry),
                "entry": entry,
            }
        )

    def discard_replay(self) -> None:
        if self._phase != "replaying":
            raise ProtocolStateError("no replay registry to discard")
        self._discard_replay_state()
        self._reset_view()
        self._emit_state()

    # -- breakpoints -----------------------------------------------------------------------

    def edit_breakpoint(self, action: str, bp: BreakpointDefinition) -> None:
        snapshot_like_active = (
            self._phase == "debugging"
            and self._mode in (DebugMode.SNAPSHOT, DebugMode.PROFILER)
        )
        if snapshot_like_active or self._session_stopped or self._phase == "replaying":
            raise RefusedInMode(
                "breakpoints are locked during snapshot/profiler sessions "
                "and while their results are held"
            )
        existing = next((b for b in self._breakpoints if b.key == bp.key), None)
        changed = False
        if action == "add":
            if existing is None:
                self._breakpoints.append(bp)
                changed = True
        elif action == "remove":
            if existing is not None:
                self._breakpoints.remove(existing)
                changed = True
        elif action == "toggle":
            if existing is not None and existing.enabled != bp.enabled:
                existing.enabled = bp.enabled
                changed = True
        else:
            raise ProtocolStateError(f"unknown breakpoint action {action!r}")
        if not changed:
            return
        sync_session = (
            self._phase == "debugging"
            and self._mode is DebugMode.SYNCHRONOUS
            and self._session_id is not None
        )
        if sync_session:
            cls = BreakpointToggle if action == "toggle" else BreakpointChange
            self._publish(
                cls(
                    aci_id=self._selected_aci,
                    workflow_id=self._workflow_id,
                    session_id=self._session_id,
                    breakpoint=BreakpointDefinition(bp.task_id, bp.port_id, bp.side, bp.enabled),
                )
            )
        self._emit_state()

    # -- mock mode -----------------------------------------------------------------------------

    def _start_mock(self) -> None:
        if self._workflow_id is None:
            raise ProtocolStateError("select a workflow first")
        if self._mock_engine is not None or self._session_id is not None:
            raise ProtocolStateError("a session is already active")
        self._mock_engine = Engine(
            self.workflow_definition(), self._mock_delegate, scheduler=self._scheduler
        )
        self._mock_suspended = False
        self._mock_seq = 0
        self._phase = "debugging"
        self._reset_view()
        log.info("client %s: mock session started", self._config.mes_id)
        self._emit_state()

    def _stop_mock(self) -> None:
        self._clear_session_local("mock-stopped")
        self._emit_state()

    def mock_inject(self, task_id: str, port_id: str, value: VariableValue) -> None:
        if self._mock_engine is None:
            raise ProtocolStateError("no mock session is running")
        try:
            self._mock_engine.inject(task_id, port_id, value)
        except LookupError as exc:
            raise ProtocolStateError(str(exc)) from exc

    def _mock_delegate(self, ev: HookEvent) -> Verdict:
        # Mirrors the remote synchronous semantics on the local engine.
        if self._mock_suspended:
            return Verdict.DROP_EVENT
        side = _port_side(ev.side)
        bp = next(
            (
                b
                for b in self._breakpoints
                if b.enabled and b.key == (ev.task_id, ev.port_id, side)
            ),
            None,
        )
        if bp is None:
            return Verdict.PROCEED
        self._mock_seq += 1
        entry = DebugSessionInfoEntry(
            entry_seq=self._mock_seq,
            timestamp=int(self._scheduler.now() * 1000),
            context_id=ev.context.context_id,
            task_id=ev.task_id,
            port_id=ev.port_id,
            side=side,
            value=ev.value,
            breakpoint=BreakpointDefinition(bp.task_id, bp.port_id, bp.side, bp.enabled),
        )
        self._mock_suspended = True
        self._display(entry)
        return Verdict.SUSPEND_UNTIL_RESUME

    # -- plumbing ------------------------------------------------------------------------------

    def _publish(self, message) -> None:
        try:
            self._bus.publish(proto.subject_of(message), proto.payload_bytes(message))
        except ConnectionError as exc:
            log.warning("client %s: publish failed: %s", self._config.mes_id, exc)

    def _decode(self, env: Envelope):
        try:
            return proto.decode_payload(env.subject, env.payload)
        except proto.DecodeError as exc:
            log.warning("client %s: undecodable %s: %s", self._config.mes_id, env.subject, exc)
            return None


def run_mock_debug(
    definition: WorkflowDefinition,
    breakpoints: list,
    manual_inputs: list,
    *,
    auto_resume: bool = True,
) -> list:
    """Run a local engine over scripted inputs; returns the ordered hook trace.

    `manual_inputs` is a list of (task_id, port_id, VariableValue) triples,
    optionally (at_ms, task_id, port_id, value) to space them out in virtual
    time. Matching enabled breakpoints suspend the engine exactly like a
    remote synchronous session; with auto_resume the suspension is released
    immediately so the run completes headless. The trace lists every hook
    event the engine acted on as (task_id, port_id, side, value).
    """
    scheduler = VirtualScheduler()
    trace: list = []
    suspended = [False]
    keys = {bp.key for bp in breakpoints if bp.enabled}

    def delegate(ev: HookEvent) -> Verdict:
        if suspended[0]:
            return Verdict.DROP_EVENT
        side = _port_side(ev.side)
        trace.append((ev.task_id, ev.port_id, side, ev.value))
        if (ev.task_id, ev.port_id, side) in keys:
            suspended[0] = True
            if auto_resume:
                def release():
                    suspended[0] = False
                    engine.resume()
                scheduler.call_soon(release)
            return Verdict.SUSPEND_UNTIL_RESUME
        return Verdict.PROCEED

    engine = Engine(definition, delegate, scheduler=scheduler)
    for step in manual_inputs:
        if len(step) == 4:
            at_ms, task_id, port_id, value = step
        else:
            task_id, port_id, value = step
            at_ms = 0
        scheduler.call_later(
            at_ms / 1000.0,
            lambda t=task_id, p=port_id, v=value: engine.inject(t, p, v),
        )
    while True:
        deadline = scheduler.next_deadline()
        if deadline is None:
            break
        scheduler.run_until(deadline)
    return trace


class FrontendServer:
    """Serves the frontend API over WebSocket at ws://host:port/frontend."""

    def __init__(self, client: DebugClient, host: str = "127.0.0.1", port: int = 0):
        self._client = client
        self._conns_lock = threading.Lock()
        self._queues: list = []
        self._server = ws_serve(self._handle, host, port, compression=None, max_size=None)
        self.host, self.port = self._server.socket.getsockname()[:2]
        self._thread = threading.Thread(
            target=self._server.serve_forever, name=f"frontend:{self.port}", daemon=True
        )
        self._thread.start()
        client.add_listener(self._broadcast)
        log.info("frontend API on ws://%s:%s%s", self.host, self.port, FRONTEND_PATH)

    @property
    def address(self) -> str:
        return f"ws://{self.host}:{self.port}{FRONTEND_PATH}"

    def close(self) -> None:
        self._client.remove_listener(self._broadcast)
        self._server.shutdown()
        with self._conns_lock:
            queues = list(self._queues)
        for q in queues:
            q.put(None)
        self._thread.join(timeout=5.0)

    def _broadcast(self, event: dict) -> None:
        frame = json.dumps(event)
        with self._conns_lock:
            queues = list(self._queues)
        for q in queues:
            try:
                q.put_nowait(frame)
            except queue.Full:
                log.warning("frontend connection too slow; event dropped")

    def _handle(self, conn) -> None:
        if conn.request.path != FRONTEND_PATH:
            conn.close(code=1008, reason=f"unknown endpoint {conn.request.path}")
            return
        outbound: queue.Queue = queue.Queue(maxsize=10_000)
        # late joiners get the current truth immediately
        outbound.put(json.dumps({"type": "stateChanged", "state": self._client.snapshot()}))
        outbound.put(json.dumps({"type": "catalogChanged", "catalog": self._client.catalog_json()}))
        with self._conns_lock:
            self._queues.append(outbound)
        sender = threading.Thread(
            target=self._send_loop, args=(conn, outbound), daemon=True
        )
        sender.start()
        try:
            for message in conn:
                if isinstance(message, bytes):
                    message = message.decode("utf-8")
                try:
                    cmd = json.loads(message)
                except json.JSONDecodeError:
                    continue
                if isinstance(cmd, dict):
                    self._client.handle_command(cmd)
        except Exception:
            pass
        finally:
            with self._conns_lock:
                if outbound in self._queues:
                    self._queues.remove(outbound)
            outbound.put(None)

    @staticmethod
    def _send_loop(conn, outbound: queue.Queue) -> None:
        while True:
            frame = outbound.get()
            if frame is None:
                return
            try:
                conn.send(frame)
            except Exception:
                return
