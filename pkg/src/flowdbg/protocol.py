"""The 16-message remote debugging protocol: message types, subjects, codec.

Every message travels as one JSON envelope `{subject, kind, correlationId?,
payload}`. The subject is the message name with its routing identifiers
appended underscore-separated (e.g. `onDebugStarted_M1_A1_W1`), which is why
identifiers themselves may not contain an underscore. The payload carries the
message parameters under their canonical wire names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .values import ConversionError, VariableValue


class DecodeError(ValueError):
    """Wire bytes do not form a valid protocol message."""

    def __init__(self, message: str, field_name: Optional[str] = None):
        super().__init__(message)
        self.field_name = field_name


class DebugMode(str, Enum):
    MOCK = "mock"  # local only; never crosses the wire
    SYNCHRONOUS = "synchronous"
    SNAPSHOT = "snapshot"
    PROFILER = "profiler"


class PortSide(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass
class BreakpointDefinition:
    """A watch on one task port; identity is (taskId, portId, side)."""

    task_id: str
    port_id: str
    side: PortSide
    enabled: bool = True

    @property
    def key(self):
        return (self.task_id, self.port_id, self.side)


@dataclass
class DebugSessionInfo:
    session_id: str
    mode: DebugMode
    mes_id: str
    workflow_id: str
    last_renewal: float
    breakpoints: list = field(default_factory=list)
    chosen_context: Optional[str] = None


@dataclass
class DebugSessionInfoEntry:
    """One recorded variable change: the registry element."""

    entry_seq: int
    timestamp: int  # wall-clock milliseconds
    context_id: str
    task_id: str
    port_id: str
    side: PortSide
    value: VariableValue
    breakpoint: BreakpointDefinition


# --- message types (Table-ordered) ------------------------------------------


@dataclass(frozen=True)
class CommunicationStarted:
    aci_id: str


@dataclass(frozen=True)
class CommunicationAttempt:
    aci_id: str


@dataclass(frozen=True)
class CheckWorkflowRunning:
    aci_id: str
    workflow_id: str
    session_id: Optional[str] = None


@dataclass(frozen=True)
class CheckWorkflowRunningResponse:
    aci_id: str
    workflow_id: str
    running: bool
    sessions: list = field(default_factory=list)


@dataclass(frozen=True)
class BreakpointChange:
    aci_id: str
    workflow_id: str
    session_id: str
    breakpoint: BreakpointDefinition


@dataclass(frozen=True)
class BreakpointToggle:
    aci_id: str
    workflow_id: str
    session_id: str
    breakpoint: BreakpointDefinition


@dataclass(frozen=True)
class StartDebug:
    aci_id: str
    mes_id: str
    workflow_id: str
    debug_mode: DebugMode
    breakpoints: list = field(default_factory=list)


@dataclass(frozen=True)
class DebugStarted:
    mes_id: str
    aci_id: str
    workflow_id: str
    session_id: str


@dataclass(frozen=True)
class StopDebug:
    aci_id: str
    session_id: str


@dataclass(frozen=True)
class DebugStopped:
    aci_id: str
    session_id: str
    registry: list = field(default_factory=list)


@dataclass(frozen=True)
class SessionRenewal:
    aci_id: str
    session_id: str


@dataclass(frozen=True)
class BeforeSetOutputs:
    aci_id: str
    session_id: str
    workflow_id: str
    registry_entry: DebugSessionInfoEntry


@dataclass(frozen=True)
class AfterSetInputs:
    aci_id: str
    session_id: str
    workflow_id: str
    registry_entry: DebugSessionInfoEntry


@dataclass(frozen=True)
class ReceivedExecutionContext:
    aci_id: str
    workflow_id: str
    session_id: str
    execution_context: str


@dataclass(frozen=True)
class AvailableACIRequest:
    workflow_id: str


@dataclass(frozen=True)
class AvailableACIRequestResponse:
    workflow_id: str
    aci_id: str
    running: bool


DebugMessage = Union[
    CommunicationStarted,
    CommunicationAttempt,
    CheckWorkflowRunning,
    CheckWorkflowRunningResponse,
    BreakpointChange,
    BreakpointToggle,
    StartDebug,
    DebugStarted,
    StopDebug,
    DebugStopped,
    SessionRenewal,
    BeforeSetOutputs,
    AfterSetInputs,
    ReceivedExecutionContext,
    AvailableACIRequest,
    AvailableACIRequestResponse,
]


# --- field codecs ------------------------------------------------------------


def _check_id(name: str, value) -> str:
    if not isinstance(value, str) or not value:
        raise DecodeError(f"{name} must be a non-empty string", name)
    if "_" in value:
        raise DecodeError(f"{name} may not contain '_' (subject separator): {value!r}", name)
    return value


def _enc_id(name, v):
    return _check_id(name, v)


def _dec_id(name, v):
    return _check_id(name, v)


def _enc_opt_id(name, v):
    return None if v is None else _check_id(name, v)


def _dec_opt_id(name, v):
    return None if v is None else _check_id(name, v)


def _enc_bool(name, v):
    if not isinstance(v, bool):
        raise DecodeError(f"{name} must be a boolean", name)
    return v


_dec_bool = _enc_bool


def _enc_mode(name, v):
    if not isinstance(v, DebugMode):
        raise DecodeError(f"{name} must be a DebugMode", name)
    if v is DebugMode.MOCK:
        raise DecodeError("mock debug mode never crosses the wire", name)
    return v.value


def _dec_mode(name, v):
    try:
        mode = DebugMode(v)
    except ValueError:
        raise DecodeError(f"{name} has unknown mode {v!r}", name) from None
    if mode is DebugMode.MOCK:
        raise DecodeError("mock debug mode never crosses the wire", name)
    return mode


def _dec_side(name, v):
    try:
        return PortSide(v)
    except ValueError:
        raise DecodeError(f"{name} has unknown side {v!r}", name) from None


def _enc_value(name, v: VariableValue):
    if not isinstance(v, VariableValue):
        raise DecodeError(f"{name} must be a VariableValue", name)
    return v.to_json()


def _dec_value(name, v):
    if not isinstance(v, dict):
        raise DecodeError(f"{name} must be an object", name)
    try:
        return VariableValue.from_json(v)
    except ConversionError as exc:
        raise DecodeError(f"{name}: {exc}", name) from None


def _enc_breakpoint(name, bp: BreakpointDefinition):
    if not isinstance(bp, BreakpointDefinition):
        raise DecodeError(f"{name} must be a BreakpointDefinition", name)
    return {
        "taskId": bp.task_id,
        "portId": bp.port_id,
        "side": bp.side.value,
        "enabled": bool(bp.enabled),
    }


def _dec_breakpoint(name, doc):
    if not isinstance(doc, dict):
        raise DecodeError(f"{name} must be an object", name)
    for key in ("taskId", "portId", "side", "enabled"):
        if key not in doc:
            raise DecodeError(f"{name} missing {key}", key)
    return BreakpointDefinition(
        task_id=str(doc["taskId"]),
        port_id=str(doc["portId"]),
        side=_dec_side("side", doc["side"]),
        enabled=_dec_bool("enabled", doc["enabled"]),
    )


def _enc_breakpoints(name, bps):
    return [_enc_breakpoint(name, bp) for bp in bps]


def _dec_breakpoints(name, docs):
    if not isinstance(docs, list):
        raise DecodeError(f"{name} must be a list", name)
    return [_dec_breakpoint(name, d) for d in docs]


def _enc_session(name, s: DebugSessionInfo):
    doc = {
        "sessionId": _check_id("sessionId", s.session_id),
        "mode": _enc_mode("mode", s.mode),
        "mesId": _check_id("mesId", s.mes_id),
        "workflowId": _check_id("workflowId", s.workflow_id),
        "lastRenewal": float(s.last_renewal),
        "breakpoints": _enc_breakpoints("breakpoints", s.breakpoints),
    }
    if s.chosen_context is not None:
        doc["chosenContext"] = _check_id("chosenContext", s.chosen_context)
    return doc


def _dec_session(name, doc):
    if not isinstance(doc, dict):
        raise DecodeError(f"{name} must be an object", name)
    for key in ("sessionId", "mode", "mesId", "workflowId", "lastRenewal", "breakpoints"):
        if key not in doc:
            raise DecodeError(f"{name} missing {key}", key)
    return DebugSessionInfo(
        session_id=_check_id("sessionId", doc["sessionId"]),
        mode=_dec_mode("mode", doc["mode"]),
        mes_id=_check_id("mesId", doc["mesId"]),
        workflow_id=_check_id("workflowId", doc["workflowId"]),
        last_renewal=float(doc["lastRenewal"]),
        breakpoints=_dec_breakpoints("breakpoints", doc["breakpoints"]),
        chosen_context=_dec_opt_id("chosenContext", doc.get("chosenContext")),
    )


def _enc_sessions(name, sessions):
    return [_enc_session(name, s) for s in sessions]


def _dec_sessions(name, docs):
    if not isinstance(docs, list):
        raise DecodeError(f"{name} must be a list", name)
    return [_dec_session(name, d) for d in docs]


def _enc_entry(name, e: DebugSessionInfoEntry):
    if not isinstance(e, DebugSessionInfoEntry):
        raise DecodeError(f"{name} must be a DebugSessionInfoEntry", name)
    return {
        "entrySeq": int(e.entry_seq),
        "timestamp": int(e.timestamp),
        "contextId": _check_id("contextId", e.context_id),
        "taskId": str(e.task_id),
        "portId": str(e.port_id),
        "side": e.side.value,
        "value": _enc_value("value", e.value),
        "breakpoint": _enc_breakpoint("breakpoint", e.breakpoint),
    }


def _dec_entry(name, doc):
    if not isinstance(doc, dict):
        raise DecodeError(f"{name} must be an object", name)
    for key in ("entrySeq", "timestamp", "contextId", "taskId", "portId", "side", "value", "breakpoint"):
        if key not in doc:
            raise DecodeError(f"{name} missing {key}", key)
    return DebugSessionInfoEntry(
        entry_seq=int(doc["entrySeq"]),
        timestamp=int(doc["timestamp"]),
        context_id=_check_id("contextId", doc["contextId"]),
        task_id=str(doc["taskId"]),
        port_id=str(doc["portId"]),
        side=_dec_side("side", doc["side"]),
        value=_dec_value("value", doc["value"]),
        breakpoint=_dec_breakpoint("breakpoint", doc["breakpoint"]),
    )


def _enc_registry(name, entries):
    seqs = [e.entry_seq for e in entries]
    if seqs != sorted(seqs):
        raise DecodeError(f"{name} must be sorted by entrySeq", name)
    return [_enc_entry(name, e) for e in entries]


def _dec_registry(name, docs):
    if not isinstance(docs, list):
        raise DecodeError(f"{name} must be a list", name)
    entries = [_dec_entry(name, d) for d in docs]
    seqs = [e.entry_seq for e in entries]
    if seqs != sorted(seqs):
        raise DecodeError(f"{name} must be sorted by entrySeq", name)
    return entries


def _enc_int(name, v):
    if not isinstance(v, int) or isinstance(v, bool):
        raise DecodeError(f"{name} must be an integer", name)
    return v


# --- message schema table -----------------------------------------------------

# (attr, wire name, encoder, decoder, optional)
_ID = (_enc_id, _dec_id, False)
_OPT_ID = (_enc_opt_id, _dec_opt_id, True)
_BOOL = (_enc_bool, _dec_bool, False)


class _Schema:
    __slots__ = ("cls", "name", "attachments", "fields")

    def __init__(self, cls, name, attachments, fields):
        self.cls = cls
        self.name = name
        self.attachments = attachments  # attr names appended to the subject
        self.fields = fields  # (attr, wire, enc, dec, optional)


def _f(attr, wire, enc, dec, optional=False):
    return (attr, wire, enc, dec, optional)


_SCHEMAS = [
    _Schema(CommunicationStarted, "onCommunicationStarted", (), [
        _f("aci_id", "aciId", *_ID),
    ]),
    _Schema(CommunicationAttempt, "onCommunicationAttempt", ("aci_id",), [
        _f("aci_id", "aciId", *_ID),
    ]),
    _Schema(CheckWorkflowRunning, "onCheckWorkflowRunning", ("aci_id",), [
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("session_id", "sessionId", *_OPT_ID),
    ]),
    _Schema(CheckWorkflowRunningResponse, "onCheckWorkflowRunningResponse",
            ("aci_id", "workflow_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("running", "running", *_BOOL),
        _f("sessions", "sessions", _enc_sessions, _dec_sessions),
    ]),
    _Schema(BreakpointChange, "onBreakpointChange", ("aci_id", "workflow_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("breakpoint", "breakpoint", _enc_breakpoint, _dec_breakpoint),
    ]),
    _Schema(BreakpointToggle, "onBreakpointToggle", ("aci_id", "workflow_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("breakpoint", "breakpoint", _enc_breakpoint, _dec_breakpoint),
    ]),
    _Schema(StartDebug, "onStartDebug", ("aci_id",), [
        _f("aci_id", "aciId", *_ID),
        _f("mes_id", "mesId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("debug_mode", "debugMode", _enc_mode, _dec_mode),
        _f("breakpoints", "breakpoints", _enc_breakpoints, _dec_breakpoints),
    ]),
    _Schema(DebugStarted, "onDebugStarted", ("mes_id", "aci_id", "workflow_id"), [
        _f("mes_id", "mesId", *_ID),
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("session_id", "sessionId", *_ID),
    ]),
    _Schema(StopDebug, "onStopDebug", ("aci_id",), [
        _f("aci_id", "aciId", *_ID),
        _f("session_id", "sessionId", *_ID),
    ]),
    _Schema(DebugStopped, "onDebugStopped", ("aci_id", "session_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("registry", "registry", _enc_registry, _dec_registry),
    ]),
    _Schema(SessionRenewal, "onSessionRenewal", ("aci_id",), [
        _f("aci_id", "aciId", *_ID),
        _f("session_id", "sessionId", *_ID),
    ]),
    _Schema(BeforeSetOutputs, "onBeforeSetOutputs", ("aci_id", "session_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("registry_entry", "registryEntry", _enc_entry, _dec_entry),
    ]),
    _Schema(AfterSetInputs, "onAfterSetInputs", ("aci_id", "session_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("registry_entry", "registryEntry", _enc_entry, _dec_entry),
    ]),
    _Schema(ReceivedExecutionContext, "onReceivedExecutionContext",
            ("aci_id", "workflow_id"), [
        _f("aci_id", "aciId", *_ID),
        _f("workflow_id", "workflowId", *_ID),
        _f("session_id", "sessionId", *_ID),
        _f("execution_context", "executionContext", *_ID),
    ]),
    _Schema(AvailableACIRequest, "onAvailableACIRequest", (), [
        _f("workflow_id", "workflowId", *_ID),
    ]),
    _Schema(AvailableACIRequestResponse, "onAvailableACIRequestResponse",
            ("workflow_id",), [
        _f("workflow_id", "workflowId", *_ID),
        _f("aci_id", "aciId", *_ID),
        _f("running", "running", *_BOOL),
    ]),
]

_BY_CLS = {s.cls: s for s in _SCHEMAS}
_BY_NAME = {s.name: s for s in _SCHEMAS}
MESSAGE_NAMES = tuple(s.name for s in _SCHEMAS)


def breakpoint_to_json(bp: BreakpointDefinition) -> dict:
    return _enc_breakpoint("breakpoint", bp)


def breakpoint_from_json(doc: dict) -> BreakpointDefinition:
    return _dec_breakpoint("breakpoint", doc)


def entry_to_json(entry: DebugSessionInfoEntry) -> dict:
    return _enc_entry("registryEntry", entry)


def entry_from_json(doc: dict) -> DebugSessionInfoEntry:
    return _dec_entry("registryEntry", doc)


def subject_of(message: DebugMessage) -> str:
    """Message name plus underscore-separated attachment identifiers."""
    schema = _BY_CLS.get(type(message))
    if schema is None:
        raise ValueError(f"not a protocol message: {message!r}")
    parts = [schema.name]
    for attr in schema.attachments:
        parts.append(_check_id(attr, getattr(message, attr)))
    return "_".join(parts)


def subscription_subject(cls, *attachment_ids: str) -> str:
    """Build the subject a receiver subscribes to for a message class."""
    schema = _BY_CLS[cls]
    if len(attachment_ids) != len(schema.attachments):
        raise ValueError(
            f"{schema.name} takes {len(schema.attachments)} attachment ids, got {len(attachment_ids)}"
        )
    return "_".join([schema.name, *attachment_ids])


def to_payload(message: DebugMessage) -> dict:
    schema = _BY_CLS.get(type(message))
    if schema is None:
        raise ValueError(f"not a protocol message: {message!r}")
    payload = {}
    for attr, wire, enc, _dec, optional in schema.fields:
        value = getattr(message, attr)
        if optional and value is None:
            continue
        payload[wire] = enc(wire, value)
    return payload


def payload_bytes(message: DebugMessage) -> bytes:
    return json.dumps(to_payload(message), separators=(",", ":")).encode("utf-8")


def from_wire(subject: str, payload: dict) -> DebugMessage:
    """Rebuild a message from its subject and payload, cross-checking both."""
    name = subject.split("_", 1)[0]
    schema = _BY_NAME.get(name)
    if schema is None:
        raise DecodeError(f"unknown message name {name!r}")
    if not isinstance(payload, dict):
        raise DecodeError("payload must be an object")
    kwargs = {}
    for attr, wire, _enc, dec, optional in schema.fields:
        if wire not in payload:
            if optional:
                kwargs[attr] = None
                continue
            raise DecodeError(f"missing field {wire!r} in {name}", wire)
        kwargs[attr] = dec(wire, payload[wire])
    message = schema.cls(**kwargs)
    expected = subject_of(message)
    if expected != subject:
        raise DecodeError(f"subject {subject!r} does not match payload ({expected!r})")
    return message


def decode_payload(subject: str, payload_octets: bytes) -> DebugMessage:
    try:
        payload = json.loads(payload_octets.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"payload is not JSON: {exc}") from exc
    return from_wire(subject, payload)


def encode(message: DebugMessage) -> bytes:
    """Serialize to the wire envelope; decode(encode(m)) == m."""
    envelope = {
        "subject": subject_of(message),
        "kind": "publish",
        "payload": to_payload(message),
    }
    return json.dumps(envelope, separators=(",", ":")).encode("utf-8")


def decode(octets: bytes) -> DebugMessage:
    try:
        envelope = json.loads(octets.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"envelope is not JSON: {exc}") from exc
    if not isinstance(envelope, dict) or "subject" not in envelope:
        raise DecodeError("envelope must be an object with a subject")
    payload = envelope.get("payload")
    if isinstance(payload, str):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise DecodeError(f"payload is not JSON: {exc}") from exc
    return from_wire(envelope["subject"], payload)
