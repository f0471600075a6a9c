"""IoMT-side agent: one Automation Controller instance hosting workflow engines.

The agent answers the MES-side protocol for its controller id, enforces the
session availability rules, dispatches engine hooks per debug mode, and
garbage-collects sessions whose renewals stopped arriving.

Availability rules for one workflow's session set:

* an active synchronous session blocks every new session;
* any active snapshot or profiler session blocks a new synchronous one;
* snapshot and profiler sessions coexist freely.

All protocol handling and hook dispatch run on the agent's scheduler, which
makes the availability and suspension invariants atomic per instance. A
synchronous suspension never blocks the scheduler: the notification goes out
as a correlated request and the engine resumes when the reply (or a timeout)
comes back.
"""

from __future__ import annotations

import itertools
import logging
import uuid
from dataclasses import dataclass, field
from typing import Optional

from . import protocol as proto
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
    DebugSessionInfo,
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
from .workflow import WorkflowDefinition

log = logging.getLogger(__name__)

REGISTRY_CAP = 100_000  # entries per session; oldest dropped beyond this


def compute_availability(sessions, requested: DebugMode) -> bool:
    """True iff starting `requested` violates no rule for this session set."""
    if requested not in (DebugMode.SYNCHRONOUS, DebugMode.SNAPSHOT, DebugMode.PROFILER):
        raise ValueError(f"not a remote debug mode: {requested!r}")
    modes = [s.mode for s in sessions]
    if DebugMode.SYNCHRONOUS in modes:
        return False
    if requested is DebugMode.SYNCHRONOUS and modes:
        return False
    return True


@dataclass
class AgentConfig:
    workflows: list
    aci_id: Optional[str] = None  # random when unset
    sweep_interval: float = 30.0
    session_expiry: float = 35.0
    sync_reply_timeout: float = 300.0


@dataclass
class _SessionState:
    info: DebugSessionInfo
    registry: Optional[list]  # snapshot/profiler only
    next_entry_seq: int = 1


@dataclass
class _WorkflowRuntime:
    definition: WorkflowDefinition
    engine: Engine
    suspended_session: Optional[str] = None
    suspend_token: int = 0


def _port_side(side: HookSide) -> PortSide:
    return PortSide.OUTPUT if side is HookSide.BEFORE_SET_OUTPUTS else PortSide.INPUT


class Agent:
    """Runs one controller instance against a connected bus client."""

    def __init__(self, bus, scheduler, config: AgentConfig, *, own_bus: bool = True):
        self.aci_id = config.aci_id or f"aci-{uuid.uuid4().hex[:10]}"
        if "_" in self.aci_id:
            raise ValueError("controller instance id may not contain '_'")
        self._bus = bus
        self._scheduler = scheduler
        self._config = config
        self._own_bus = own_bus
        self._context_ids = itertools.count(1)  # contexts unique across this agent
        self._runtimes: dict = {}
        self._sessions: dict = {}  # session id -> _SessionState
        self._subscriptions: list = []
        self._sweep_timer = None
        self._started = False
        self.log_records: list = []

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> "Agent":
        if self._started:
            return self
        self._started = True
        for defn in self._config.workflows:
            engine = Engine(
                defn,
                lambda ev, wf=defn.workflow_id: self._on_hook(wf, ev),
                scheduler=self._scheduler,
                context_ids=self._context_ids,
            )
            self._runtimes[defn.workflow_id] = _WorkflowRuntime(defn, engine)
        aci = self.aci_id
        self._sub(subscription_subject(CommunicationAttempt, aci), self._on_communication_attempt)
        self._sub(subscription_subject(CheckWorkflowRunning, aci), self._on_check_workflow_running)
        self._sub(subscription_subject(StartDebug, aci), self._on_start_debug)
        self._sub(subscription_subject(StopDebug, aci), self._on_stop_debug)
        self._sub(subscription_subject(SessionRenewal, aci), self._on_session_renewal)
        self._sub(subscription_subject(AvailableACIRequest), self._on_available_request)
        for wf_id in self._runtimes:
            self._sub(subscription_subject(BreakpointChange, aci, wf_id), self._on_breakpoint_change)
            self._sub(subscription_subject(BreakpointToggle, aci, wf_id), self._on_breakpoint_toggle)
            self._sub(
                subscription_subject(ReceivedExecutionContext, aci, wf_id),
                self._on_received_context,
            )
        self._publish(CommunicationStarted(aci_id=aci))
        self._log("agent-started", workflows=sorted(self._runtimes))
        self._sweep_timer = self._scheduler.call_later(self._config.sweep_interval, self._sweep_tick)
        return self

    def stop(self) -> None:
        if not self._started:
            return
        self._started = False
        if self._sweep_timer is not None:
            self._sweep_timer.cancel()
        for rt in self._runtimes.values():
            rt.engine.stop()
        for sub in self._subscriptions:
            sub.cancel()
        self._subscriptions.clear()
        self._sessions.clear()
        if self._own_bus:
            self._bus.close()
        self._log("agent-stopped")

    # -- views -------------------------------------------------------------------

    def engine(self, workflow_id: str) -> Engine:
        return self._runtimes[workflow_id].engine

    def workflow(self, workflow_id: str) -> WorkflowDefinition:
        return self._runtimes[workflow_id].definition

    @property
    def workflow_ids(self) -> list:
        return sorted(self._runtimes)

    @property
    def sessions(self) -> dict:
        return {sid: state.info for sid, state in self._sessions.items()}

    def registry(self, session_id: str) -> Optional[list]:
        state = self._sessions.get(session_id)
        return None if state is None else state.registry

    # -- helpers -------------------------------------------------------------------

    def _sub(self, subject: str, handler) -> None:
        def wrapped(env: Envelope, _handler=handler):
            try:
                msg = proto.decode_payload(env.subject, env.payload)
            except proto.DecodeError as exc:
                log.warning("agent %s: undecodable %s: %s", self.aci_id, env.subject, exc)
                return
            _handler(env, msg)

        self._subscriptions.append(self._bus.subscribe(subject, wrapped))

    def _publish(self, message) -> None:
        try:
            self._bus.publish(proto.subject_of(message), proto.payload_bytes(message))
        except ConnectionError as exc:
            log.warning("agent %s: publish failed: %s", self.aci_id, exc)

    def _log(self, event: str, **details) -> None:
        record = {"t": self._scheduler.now(), "event": event, "aciId": self.aci_id, **details}
        self.log_records.append(record)
        log.info("agent %s: %s %s", self.aci_id, event, details or "")

    def _sessions_of(self, workflow_id: str) -> list:
        return [s for s in self._sessions.values() if s.info.workflow_id == workflow_id]

    # -- protocol handlers -----------------------------------------------------------

    def _on_communication_attempt(self, env: Envelope, msg: CommunicationAttempt) -> None:
        if env.kind == "request":
            self._bus.reply(env, b'{"connected":true}')

    def _on_check_workflow_running(self, env: Envelope, msg: CheckWorkflowRunning) -> None:
        if msg.workflow_id not in self._runtimes:
            return  # silence is the negative signal
        response = CheckWorkflowRunningResponse(
            aci_id=self.aci_id,
            workflow_id=msg.workflow_id,
            running=True,
            sessions=[s.info for s in self._sessions_of(msg.workflow_id)],
        )
        if env.kind == "request":
            self._bus.reply(env, proto.payload_bytes(response))
        else:
            self._publish(response)

    def _on_start_debug(self, env: Envelope, msg: StartDebug) -> None:
        if msg.workflow_id not in self._runtimes:
            self._log("session-rejected", reason="workflow-not-loaded", workflowId=msg.workflow_id)
            return
        active = [s.info for s in self._sessions_of(msg.workflow_id)]
        if not compute_availability(active, msg.debug_mode):
            self._log(
                "session-rejected",
                reason="availability",
                workflowId=msg.workflow_id,
                mode=msg.debug_mode.value,
            )
            return
        session_id = f"s-{uuid.uuid4().hex[:12]}"
        info = DebugSessionInfo(
            session_id=session_id,
            mode=msg.debug_mode,
            mes_id=msg.mes_id,
            workflow_id=msg.workflow_id,
            last_renewal=self._scheduler.now(),
            breakpoints=[
                BreakpointDefinition(bp.task_id, bp.port_id, bp.side, bp.enabled)
                for bp in msg.breakpoints
            ],
        )
        registry = [] if msg.debug_mode in (DebugMode.SNAPSHOT, DebugMode.PROFILER) else None
        self._sessions[session_id] = _SessionState(info, registry)
        self._log(
            "session-started",
            sessionId=session_id,
            mode=msg.debug_mode.value,
            workflowId=msg.workflow_id,
            breakpoints=len(info.breakpoints),
        )
        self._publish(
            DebugStarted(
                mes_id=msg.mes_id,
                aci_id=self.aci_id,
                workflow_id=msg.workflow_id,
                session_id=session_id,
            )
        )

    def _on_stop_debug(self, env: Envelope, msg: StopDebug) -> None:
        state = self._sessions.pop(msg.session_id, None)
        if state is None:
            self._log("stop-unknown-session", sessionId=msg.session_id)
            return
        info = state.info
        if info.mode is DebugMode.PROFILER:
            registry = sorted(state.registry, key=lambda e: (e.timestamp, e.entry_seq))
        else:
            registry = []
        if info.mode is DebugMode.SYNCHRONOUS:
            self._release_suspension(info.workflow_id, msg.session_id)
        self._publish(
            DebugStopped(aci_id=self.aci_id, session_id=msg.session_id, registry=registry)
        )
        self._log(
            "session-stopped",
            sessionId=msg.session_id,
            mode=info.mode.value,
            registryEntries=len(registry),
        )

    def _on_session_renewal(self, env: Envelope, msg: SessionRenewal) -> None:
        state = self._sessions.get(msg.session_id)
        if state is None:
            log.debug("agent %s: renewal for unknown session %s", self.aci_id, msg.session_id)
            return
        state.info.last_renewal = self._scheduler.now()

    def _on_available_request(self, env: Envelope, msg: AvailableACIRequest) -> None:
        self._publish(
            AvailableACIRequestResponse(
                workflow_id=msg.workflow_id,
                aci_id=self.aci_id,
                running=msg.workflow_id in self._runtimes,
            )
        )

    def _on_breakpoint_change(self, env: Envelope, msg: BreakpointChange) -> None:
        state = self._sessions.get(msg.session_id)
        if state is None or state.info.mode is not DebugMode.SYNCHRONOUS:
            self._log("breakpoint-rejected", sessionId=msg.session_id, change="change")
            return
        bp = msg.breakpoint
        existing = next((b for b in state.info.breakpoints if b.key == bp.key), None)
        if existing is not None:
            state.info.breakpoints.remove(existing)
            action = "removed"
        else:
            state.info.breakpoints.append(
                BreakpointDefinition(bp.task_id, bp.port_id, bp.side, bp.enabled)
            )
            action = "added"
        self._log(
            "breakpoint-changed",
            sessionId=msg.session_id,
            action=action,
            taskId=bp.task_id,
            portId=bp.port_id,
            side=bp.side.value,
        )

    def _on_breakpoint_toggle(self, env: Envelope, msg: BreakpointToggle) -> None:
        state = self._sessions.get(msg.session_id)
        if state is None or state.info.mode is not DebugMode.SYNCHRONOUS:
            self._log("breakpoint-rejected", sessionId=msg.session_id, change="toggle")
            return
        bp = msg.breakpoint
        existing = next((b for b in state.info.breakpoints if b.key == bp.key), None)
        if existing is None:
            self._log("breakpoint-toggle-unknown", sessionId=msg.session_id, taskId=bp.task_id)
            return
        existing.enabled = bp.enabled
        self._log(
            "breakpoint-toggled",
            sessionId=msg.session_id,
            taskId=bp.task_id,
            portId=bp.port_id,
            side=bp.side.value,
            enabled=bp.enabled,
        )

    def _on_received_context(self, env: Envelope, msg: ReceivedExecutionContext) -> None:
        state = self._sessions.get(msg.session_id)
        if state is None or state.info.mode is not DebugMode.SNAPSHOT:
            return
        if state.info.chosen_context is None:
            state.info.chosen_context = msg.execution_context
            self._log(
                "context-pinned", sessionId=msg.session_id, contextId=msg.execution_context
            )

    # -- hook dispatch -------------------------------------------------------------

    def _on_hook(self, workflow_id: str, ev: HookEvent) -> Verdict:
        rt = self._runtimes[workflow_id]
        if rt.suspended_session is not None:
            # Synchronous hold: everything on this workflow is ignored, along
            # with its propagation, until the MES replies.
            return Verdict.DROP_EVENT
        verdict = Verdict.PROCEED
        side = _port_side(ev.side)
        for state in self._sessions_of(workflow_id):
            bp = next(
                (
                    b
                    for b in state.info.breakpoints
                    if b.enabled and b.key == (ev.task_id, ev.port_id, side)
                ),
                None,
            )
            if bp is None:
                continue
            entry = DebugSessionInfoEntry(
                entry_seq=state.next_entry_seq,
                timestamp=int(self._scheduler.now() * 1000),
                context_id=ev.context.context_id,
                task_id=ev.task_id,
                port_id=ev.port_id,
                side=side,
                value=ev.value,
                breakpoint=BreakpointDefinition(bp.task_id, bp.port_id, bp.side, bp.enabled),
            )
            state.next_entry_seq += 1
            mode = state.info.mode
            if mode is DebugMode.SYNCHRONOUS:
                self._suspend_for(rt, state, entry)
                verdict = Verdict.SUSPEND_UNTIL_RESUME
                break  # availability guarantees this is the only session
            if state.registry is not None:
                state.registry.append(entry)
                if len(state.registry) > REGISTRY_CAP:
                    del state.registry[0]
            if mode is DebugMode.SNAPSHOT:
                chosen = state.info.chosen_context
                if chosen is None or chosen == ev.context.context_id:
                    self._publish(self._notification(state.info, entry))
                # other-context changes stay recorded but are not reported
        return verdict

    def _notification(self, info: DebugSessionInfo, entry: DebugSessionInfoEntry):
        cls = BeforeSetOutputs if entry.side is PortSide.OUTPUT else AfterSetInputs
        return cls(
            aci_id=self.aci_id,
            session_id=info.session_id,
            workflow_id=info.workflow_id,
            registry_entry=entry,
        )

    def _suspend_for(self, rt: _WorkflowRuntime, state: _SessionState, entry) -> None:
        info = state.info
        rt.suspended_session = info.session_id
        rt.suspend_token += 1
        token = rt.suspend_token
        message = self._notification(info, entry)
        wf, sid = info.workflow_id, info.session_id
        try:
            self._bus.request(
                proto.subject_of(message),
                proto.payload_bytes(message),
                timeout=self._config.sync_reply_timeout,
                on_reply=lambda _payload: self._sync_resume(wf, sid, token, "reply"),
                on_timeout=lambda: self._sync_resume(wf, sid, token, "timeout"),
            )
        except ConnectionError as exc:
            log.warning("agent %s: breakpoint notification failed: %s", self.aci_id, exc)
            self._sync_resume(wf, sid, token, "send-failed")

    def _sync_resume(self, workflow_id: str, session_id: str, token: int, why: str) -> None:
        rt = self._runtimes.get(workflow_id)
        if rt is None or rt.suspended_session != session_id or rt.suspend_token != token:
            return
        rt.suspended_session = None
        rt.engine.resume()
        if why != "reply":
            log.warning(
                "agent %s: synchronous session %s resumed after %s", self.aci_id, session_id, why
            )
        self._log("engine-resumed", sessionId=session_id, reason=why)

    def _release_suspension(self, workflow_id: str, session_id: str) -> None:
        rt = self._runtimes.get(workflow_id)
        if rt is not None and rt.suspended_session == session_id:
            rt.suspended_session = None
            rt.engine.resume()

    # -- sweeping ----------------------------------------------------------------

    def _sweep_tick(self) -> None:
        if not self._started:
            return
        self.sweep_now()
        self._sweep_timer = self._scheduler.call_later(self._config.sweep_interval, self._sweep_tick)

    def sweep_now(self) -> list:
        """Drop sessions whose renewals went stale; returns removed session ids."""
        now = self._scheduler.now()
        stale = [
            sid
            for sid, state in self._sessions.items()
            if now - state.info.last_renewal > self._config.session_expiry
        ]
        for sid in stale:
            state = self._sessions.pop(sid)
            if state.info.mode is DebugMode.SYNCHRONOUS:
                self._release_suspension(state.info.workflow_id, sid)
            self._log("session-swept", sessionId=sid, mode=state.info.mode.value)
        return stale


def run_agent(config: AgentConfig, bus_address: str, scheduler=None) -> Agent:
    """Connect to the bus and start an agent; raises BusUnreachableError."""
    from .bus import WsBusClient
    from .runtime import RealScheduler

    scheduler = scheduler or RealScheduler(name="agent-scheduler")
    bus = WsBusClient.connect(bus_address, scheduler, name="agent")
    return Agent(bus, scheduler, config).start()
