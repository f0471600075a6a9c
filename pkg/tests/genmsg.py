"""Seeded random protocol-message generator shared by protocol and acceptance tests."""

from __future__ import annotations

import random
import string

from flowdbg import protocol as P
from flowdbg.values import ValueTag, VariableValue

_ID_ALPHABET = string.ascii_letters + string.digits + "-."


def rand_id(rng: random.Random, prefix: str = "") -> str:
    body = "".join(rng.choice(_ID_ALPHABET) for _ in range(rng.randint(1, 12)))
    return (prefix + body)[:24]


def rand_value(rng: random.Random) -> VariableValue:
    tag = rng.choice(list(ValueTag))
    if tag is ValueTag.BOOL:
        return VariableValue.bool_(rng.random() < 0.5)
    if tag is ValueTag.INT64:
        return VariableValue.int64(rng.randint(-(2**62), 2**62))
    if tag is ValueTag.FLOAT64:
        return VariableValue.float64(rng.uniform(-1e9, 1e9))
    return VariableValue.text("".join(rng.choice(_ID_ALPHABET + " _") for _ in range(rng.randint(0, 20))))


def rand_breakpoint(rng: random.Random) -> P.BreakpointDefinition:
    return P.BreakpointDefinition(
        task_id=rand_id(rng, "t"),
        port_id=rand_id(rng, "p"),
        side=rng.choice([P.PortSide.INPUT, P.PortSide.OUTPUT]),
        enabled=rng.random() < 0.5,
    )


def rand_entry(rng: random.Random, entry_seq: int) -> P.DebugSessionInfoEntry:
    return P.DebugSessionInfoEntry(
        entry_seq=entry_seq,
        timestamp=rng.randint(0, 2**40),
        context_id=rand_id(rng, "c"),
        task_id=rand_id(rng, "t"),
        port_id=rand_id(rng, "p"),
        side=rng.choice([P.PortSide.INPUT, P.PortSide.OUTPUT]),
        value=rand_value(rng),
        breakpoint=rand_breakpoint(rng),
    )


def rand_registry(rng: random.Random, max_len: int = 5) -> list:
    seqs = sorted(rng.sample(range(1, 1000), rng.randint(0, max_len)))
    return [rand_entry(rng, seq) for seq in seqs]


def rand_session(rng: random.Random) -> P.DebugSessionInfo:
    mode = rng.choice([P.DebugMode.SYNCHRONOUS, P.DebugMode.SNAPSHOT, P.DebugMode.PROFILER])
    return P.DebugSessionInfo(
        session_id=rand_id(rng, "s"),
        mode=mode,
        mes_id=rand_id(rng, "m"),
        workflow_id=rand_id(rng, "w"),
        last_renewal=round(rng.uniform(0, 1e6), 6),
        breakpoints=[rand_breakpoint(rng) for _ in range(rng.randint(0, 3))],
        chosen_context=rand_id(rng, "c") if rng.random() < 0.3 else None,
    )


def rand_message(rng: random.Random, cls) -> object:
    aci, wf, mes, sid = (rand_id(rng, "a"), rand_id(rng, "w"), rand_id(rng, "m"), rand_id(rng, "s"))
    if cls is P.CommunicationStarted:
        return cls(aci_id=aci)
    if cls is P.CommunicationAttempt:
        return cls(aci_id=aci)
    if cls is P.CheckWorkflowRunning:
        return cls(aci_id=aci, workflow_id=wf,
                   session_id=sid if rng.random() < 0.5 else None)
    if cls is P.CheckWorkflowRunningResponse:
        return cls(aci_id=aci, workflow_id=wf, running=rng.random() < 0.5,
                   sessions=[rand_session(rng) for _ in range(rng.randint(0, 3))])
    if cls in (P.BreakpointChange, P.BreakpointToggle):
        return cls(aci_id=aci, workflow_id=wf, session_id=sid, breakpoint=rand_breakpoint(rng))
    if cls is P.StartDebug:
        mode = rng.choice([P.DebugMode.SYNCHRONOUS, P.DebugMode.SNAPSHOT, P.DebugMode.PROFILER])
        return cls(aci_id=aci, mes_id=mes, workflow_id=wf, debug_mode=mode,
                   breakpoints=[rand_breakpoint(rng) for _ in range(rng.randint(0, 4))])
    if cls is P.DebugStarted:
        return cls(mes_id=mes, aci_id=aci, workflow_id=wf, session_id=sid)
    if cls is P.StopDebug:
        return cls(aci_id=aci, session_id=sid)
    if cls is P.DebugStopped:
        return cls(aci_id=aci, session_id=sid, registry=rand_registry(rng))
    if cls is P.SessionRenewal:
        return cls(aci_id=aci, session_id=sid)
    if cls in (P.BeforeSetOutputs, P.AfterSetInputs):
        return cls(aci_id=aci, session_id=sid, workflow_id=wf,
                   registry_entry=rand_entry(rng, rng.randint(1, 10_000)))
    if cls is P.ReceivedExecutionContext:
        return cls(aci_id=aci, workflow_id=wf, session_id=sid,
                   execution_context=rand_id(rng, "c"))
    if cls is P.AvailableACIRequest:
        return cls(workflow_id=wf)
    if cls is P.AvailableACIRequestResponse:
        return cls(workflow_id=wf, aci_id=aci, running=rng.random() < 0.5)
    raise AssertionError(f"no generator for {cls}")


ALL_MESSAGE_CLASSES = (
    P.CommunicationStarted,
    P.CommunicationAttempt,
    P.CheckWorkflowRunning,
    P.CheckWorkflowRunningResponse,
    P.BreakpointChange,
    P.BreakpointToggle,
    P.StartDebug,
    P.DebugStarted,
    P.StopDebug,
    P.DebugStopped,
    P.SessionRenewal,
    P.BeforeSetOutputs,
    P.AfterSetInputs,
    P.ReceivedExecutionContext,
    P.AvailableACIRequest,
    P.AvailableACIRequestResponse,
)
