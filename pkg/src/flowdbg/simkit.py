"""Scripted device simulator and end-to-end scenario runner.

The device simulator stands in for the protocol driver talking to real
equipment: it injects timed variable changes straight into an engine's
event-source outputs. The scenario runner builds a whole topology in-process
(bus, agents, headless clients), executes a scripted action list, and
evaluates expectations against frontend events, client state, agent logs,
and engine state.

Timer profiles:

* ``fast`` - wall clock with scaled-down intervals (0.2 s probes / 0.6 s
  discovery and sweep / 0.1 s auto-select) so a full scenario finishes in a
  few seconds.
* ``paper`` - the production intervals (10 s / 30 s / 5 s / 30 s sweep) run
  under virtual time, which keeps runs deterministic and instant while
  asserting at exact simulated timestamps.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .agent import Agent, AgentConfig
from .bus import LoopbackBus
from .client import ClientConfig, DebugClient
from .engine import Engine, UnknownPortError
from .runtime import RealScheduler, VirtualScheduler
from .values import VariableValue
from .workflow import WorkflowDefinition, parse_workflow

log = logging.getLogger(__name__)


class ScenarioError(RuntimeError):
    """Scenario setup or script problem (distinct from a failed expectation)."""


# assertScale stretches the scripts' withinMs/forMs budgets so one script
# works under both profiles (paper timers are ~50x the fast ones).
TIMER_PROFILES = {
    "fast": {
        "commAttemptInterval": 0.2,
        "aciRequestInterval": 0.6,
        "autoSelectWindow": 0.1,
        "sweepInterval": 0.6,
        "sessionExpiry": 0.7,
        "aciEntryExpiry": 0.6,
        "requestTimeout": 0.15,
        "syncReplyTimeout": 6.0,
        "assertScale": 1.0,
    },
    "paper": {
        "commAttemptInterval": 10.0,
        "aciRequestInterval": 30.0,
        "autoSelectWindow": 5.0,
        "sweepInterval": 30.0,
        "sessionExpiry": 35.0,
        "aciEntryExpiry": 30.0,
        "requestTimeout": 3.0,
        "syncReplyTimeout": 300.0,
        "assertScale": 50.0,
    },
}


# --- device simulator -----------------------------------------------------------


@dataclass(frozen=True)
class DeviceStep:
    at_ms: float
    task_id: str
    port_id: str
    value: VariableValue


@dataclass(frozen=True)
class DeviceScript:
    workflow_id: str
    steps: tuple

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceScript":
        steps = []
        last = 0.0
        for raw in doc.get("steps", []):
            step = DeviceStep(
                at_ms=float(raw.get("atMs", 0.0)),
                task_id=raw["taskId"],
                port_id=raw["portId"],
                value=VariableValue.from_json(raw["value"]),
            )
            if step.at_ms < last:
                raise ValueError("device step offsets must be non-decreasing")
            last = step.at_ms
            steps.append(step)
        return cls(workflow_id=doc["workflowId"], steps=tuple(steps))


class DeviceRun:
    """Injection log of one device script execution: (time, contextId) rows."""

    def __init__(self, total: int):
        self.log: list = []
        self.total = total

    @property
    def done(self) -> bool:
        return len(self.log) >= self.total


def run_device(script: DeviceScript, engine: Engine, scheduler) -> DeviceRun:
    """Schedule every step at its offset; invalid targets fail up front."""
    for step in script.steps:
        engine.validate_injection(step.task_id, step.port_id, step.value)
    run = DeviceRun(total=len(script.steps))

    def fire(step: DeviceStep) -> None:
        try:
            ctx = engine.inject(step.task_id, step.port_id, step.value)
        except UnknownPortError:
            log.exception("device step no longer injectable")
            return
        run.log.append((scheduler.now(), ctx.context_id))

    for step in script.steps:
        scheduler.call_later(step.at_ms / 1000.0, fire, step)
    return run


# --- scenario runner ----------------------------------------------------------------


@dataclass
class CheckResult:
    description: str
    passed: bool
    detail: str = ""


@dataclass
class ScenarioReport:
    name: str
    passed: bool
    checks: list = field(default_factory=list)
    transcript: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "checks": [
                {"description": c.description, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
            "transcript": self.transcript,
        }


def _get_path(obj, path: str):
    cur = obj
    for part in path.split("."):
        if cur is None:
            return None
        if isinstance(cur, list):
            try:
                cur = cur[int(part)]
            except (ValueError, IndexError):
                return None
        elif isinstance(cur, dict):
            cur = cur.get(part)
        else:
            cur = getattr(cur, part, None)
    return cur


def _matches(doc, where: dict) -> bool:
    return all(_get_path(doc, path) == expected for path, expected in where.items())


class _RealDriver:
    poll_step = 0.005

    def __init__(self, scheduler):
        self._scheduler = scheduler

    def wait(self, seconds: float) -> None:
        time.sleep(seconds)

    def poll(self, fn: Callable[[], bool], within: float) -> bool:
        deadline = time.monotonic() + within
        while True:
            if fn():
                return True
            if time.monotonic() >= deadline:
                return fn()
            time.sleep(self.poll_step)


class _VirtualDriver:
    def __init__(self, scheduler: VirtualScheduler):
        self._scheduler = scheduler

    def wait(self, seconds: float) -> None:
        self._scheduler.advance(seconds)

    def poll(self, fn: Callable[[], bool], within: float) -> bool:
        deadline = self._scheduler.now() + within
        self._scheduler.run_pending()
        while not fn():
            nxt = self._scheduler.next_deadline()
            if nxt is None or nxt > deadline:
                break
            self._scheduler.run_until(nxt)
        if fn():
            return True
        self._scheduler.run_until(deadline)
        return fn()


class _ClientRecorder:
    def __init__(self, name: str, scheduler, transcript: list):
        self.name = name
        self._scheduler = scheduler
        self._transcript = transcript
        self.events: list = []

    def __call__(self, event: dict) -> None:
        self.events.append(event)
        self._transcript.append(
            {"t": round(self._scheduler.now(), 6), "client": self.name, "event": event["type"]}
        )

    def count(self, event_type: str, where: Optional[dict] = None) -> int:
        hits = 0
        for ev in list(self.events):
            if ev.get("type") != event_type:
                continue
            if where and not _matches(ev, where):
                continue
            hits += 1
        return hits


class ScenarioRunner:
    """Owns every component a scenario spawns and tears them all down."""

    def __init__(self, script: dict, *, timer_profile: Optional[str] = None):
        if not isinstance(script, dict) or "name" not in script:
            raise ScenarioError("scenario script must be an object with a name")
        self.script = script
        profile_name = timer_profile or script.get("timerProfile", "fast")
        if profile_name not in TIMER_PROFILES:
            raise ScenarioError(f"unknown timer profile {profile_name!r}")
        self.profile_name = profile_name
        self.timers = dict(TIMER_PROFILES[profile_name])
        self.timers.update(script.get("timers", {}))
        self.virtual = profile_name == "paper"

        try:
            self.workflows = {
                wf_id: parse_workflow(doc) for wf_id, doc in script.get("workflows", {}).items()
            }
        except ValueError as exc:
            raise ScenarioError(f"bad workflow in scenario: {exc}") from exc
        self.scheduler = VirtualScheduler() if self.virtual else RealScheduler("scenario")
        self.driver = _VirtualDriver(self.scheduler) if self.virtual else _RealDriver(self.scheduler)
        self.bus = LoopbackBus()
        self.agents: dict = {}
        self.agent_specs: dict = script.get("agents", {})
        self.clients: dict = {}
        self.recorders: dict = {}
        self.transcript: list = []
        self.checks: list = []

    # -- component management ------------------------------------------------------

    def _agent_config(self, spec: dict) -> AgentConfig:
        missing = [wf for wf in spec.get("workflows", []) if wf not in self.workflows]
        if missing:
            raise ScenarioError(f"agent references undefined workflows {missing}")
        return AgentConfig(
            workflows=[self.workflows[wf] for wf in spec.get("workflows", [])],
            aci_id=spec.get("aciId"),
            sweep_interval=self.timers["sweepInterval"],
            session_expiry=self.timers["sessionExpiry"],
            sync_reply_timeout=self.timers["syncReplyTimeout"],
        )

    def start_agent(self, name: str) -> Agent:
        if name in self.agents:
            raise ScenarioError(f"agent {name!r} already running")
        spec = self.agent_specs.get(name)
        if spec is None:
            raise ScenarioError(f"agent {name!r} is not declared")
        agent = Agent(
            self.bus.client(self.scheduler, f"agent-{name}"),
            self.scheduler,
            self._agent_config(spec),
        )
        agent.start()
        self.agents[name] = agent
        return agent

    def stop_agent(self, name: str) -> None:
        agent = self.agents.pop(name, None)
        if agent is None:
            raise ScenarioError(f"agent {name!r} is not running")
        agent.stop()

    def start_client(self, name: str, spec: dict) -> DebugClient:
        wf_ids = spec.get("workflows", list(self.workflows))
        missing = [wf for wf in wf_ids if wf not in self.workflows]
        if missing:
            raise ScenarioError(f"client references undefined workflows {missing}")
        config = ClientConfig(
            mes_id=name,
            workflows={wf: self.workflows[wf] for wf in wf_ids},
            aci_request_interval=self.timers["aciRequestInterval"],
            comm_attempt_interval=self.timers["commAttemptInterval"],
            auto_select_window=self.timers["autoSelectWindow"],
            aci_entry_expiry=self.timers["aciEntryExpiry"],
            request_timeout=self.timers["requestTimeout"],
        )
        client = DebugClient(self.bus.client(self.scheduler, f"mes-{name}"), self.scheduler, config)
        recorder = _ClientRecorder(name, self.scheduler, self.transcript)
        client.add_listener(recorder)
        client.start()
        self.clients[name] = client
        self.recorders[name] = recorder
        return client

    def _client(self, name: str) -> DebugClient:
        try:
            return self.clients[name]
        except KeyError:
            raise ScenarioError(f"client {name!r} is not declared") from None

    def _recorder(self, name: str) -> _ClientRecorder:
        self._client(name)
        return self.recorders[name]

    def _agent(self, name: str) -> Agent:
        try:
            return self.agents[name]
        except KeyError:
            raise ScenarioError(f"agent {name!r} is not running") from None

    # -- run loop -----------------------------------------------------------------------

    def run(self) -> ScenarioReport:
        try:
            for name, spec in self.script.get("clients", {}).items():
                self.start_client(name, spec)
            for step_no, action in enumerate(self.script.get("steps", []), start=1):
                if not isinstance(action, dict) or "do" not in action:
                    raise ScenarioError(f"step {step_no} is not an action object")
                self._note(f"step {step_no}: {action['do']}", action)
                self._execute(action)
            passed = all(c.passed for c in self.checks)
        finally:
            leak_check = self._teardown()
        self.checks.append(leak_check)
        passed = passed and leak_check.passed
        return ScenarioReport(
            name=self.script["name"], passed=passed, checks=self.checks, transcript=self.transcript
        )

    def _note(self, text: str, detail: Optional[dict] = None) -> None:
        entry = {"t": round(self.scheduler.now(), 6), "action": text}
        if detail:
            entry["detail"] = {k: v for k, v in detail.items() if k != "do"}
        self.transcript.append(entry)

    def _teardown(self) -> CheckResult:
        for client in self.clients.values():
            client.stop()
        for agent in list(self.agents.values()):
            agent.stop()
        self.agents.clear()
        if self.virtual:
            self.scheduler.run_pending()
        remaining = self.bus.subscription_count()
        self.scheduler.stop()
        self.clients.clear()
        return CheckResult(
            "teardown leaves no bus subscriptions",
            remaining == 0,
            "" if remaining == 0 else f"{remaining} subscriptions leaked",
        )

    # -- actions ------------------------------------------------------------------------------

    def _execute(self, action: dict) -> None:
        do = action["do"]
        if do == "startAgent":
            self.start_agent(action["agent"])
        elif do == "stopAgent":
            self.stop_agent(action["agent"])
        elif do == "restartAgent":
            if action["agent"] in self.agents:
                self.stop_agent(action["agent"])
            self.start_agent(action["agent"])
        elif do == "client":
            self._client(action["client"]).handle_command(action["command"])
            if self.virtual:
                self.scheduler.run_pending()
        elif do == "device":
            self._device_step(action)
        elif do == "deviceScript":
            script = DeviceScript.from_json(action["script"])
            agent = self._agent(action["agent"])
            run_device(script, agent.engine(script.workflow_id), self.scheduler)
        elif do == "wait":
            self.driver.wait(float(action["ms"]) / 1000.0)
        elif do.startswith("expect"):
            self._expect(action)
        else:
            raise ScenarioError(f"unknown action {do!r}")

    def _device_step(self, action: dict) -> None:
        agent = self._agent(action["agent"])
        try:
            engine = agent.engine(action["workflowId"])
        except KeyError:
            raise ScenarioError(f"agent has no workflow {action['workflowId']!r}") from None
        value = VariableValue.from_json(action["value"])
        engine.inject(action["taskId"], action["portId"], value)
        if self.virtual:
            self.scheduler.run_pending()

    # -- expectations ----------------------------------------------------------------------------

    def _check(self, description: str, passed: bool, detail: str = "") -> None:
        self.checks.append(CheckResult(description, passed, detail))
        self._note(f"{'PASS' if passed else 'FAIL'}: {description}")
        if not passed:
            log.warning("scenario %s: FAILED %s (%s)", self.script["name"], description, detail)

    def _expect(self, action: dict) -> None:
        do = action["do"]
        scale = float(self.timers.get("assertScale", 1.0))
        within = float(action.get("withinMs", 2000)) * scale / 1000.0
        if do == "expectState":
            client = self._client(action["client"])
            path, expected = action["path"], action.get("equals")
            fn = lambda: _get_path(client.snapshot(), path) == expected
            ok = self.driver.poll(fn, within)
            actual = _get_path(client.snapshot(), path)
            self._check(
                action.get("describe", f"{action['client']}.{path} == {expected!r}"),
                ok,
                "" if ok else f"actual {actual!r}",
            )
        elif do == "expectEvent":
            recorder = self._recorder(action["client"])
            where = action.get("where", {})
            count = int(action.get("count", 1))
            fn = lambda: recorder.count(action["event"], where) >= count
            ok = self.driver.poll(fn, within)
            self._check(
                action.get("describe", f"{action['client']} saw {count}x {action['event']}"),
                ok,
                "" if ok else f"saw {recorder.count(action['event'], where)}",
            )
        elif do == "expectNoEvent":
            recorder = self._recorder(action["client"])
            where = action.get("where", {})
            baseline = recorder.count(action["event"], where)
            self.driver.wait(float(action.get("forMs", 300)) * scale / 1000.0)
            now_count = recorder.count(action["event"], where)
            ok = now_count == baseline
            self._check(
                action.get("describe", f"{action['client']} saw no new {action['event']}"),
                ok,
                "" if ok else f"{now_count - baseline} new events",
            )
        elif do == "expectAgentLog":
            agent = self._agent(action["agent"])
            where = action.get("where", {})
            event = action["event"]
            fn = lambda: any(
                r["event"] == event and _matches(r, where) for r in list(agent.log_records)
            )
            ok = self.driver.poll(fn, within)
            self._check(
                action.get("describe", f"agent {action['agent']} logged {event}"), ok
            )
        elif do == "expectNoAgentLog":
            agent = self._agent(action["agent"])
            where = action.get("where", {})
            event = action["event"]
            counter = lambda: sum(
                1 for r in list(agent.log_records) if r["event"] == event and _matches(r, where)
            )
            baseline = counter()
            self.driver.wait(float(action.get("forMs", 300)) * scale / 1000.0)
            ok = counter() == baseline
            self._check(
                action.get("describe", f"agent {action['agent']} did not log {event}"), ok
            )
        elif do == "expectEngine":
            agent = self._agent(action["agent"])
            engine = agent.engine(action["workflowId"])
            expected = bool(action["suspended"])
            fn = lambda: engine.suspended == expected
            ok = self.driver.poll(fn, within)
            self._check(
                action.get(
                    "describe", f"engine {action['workflowId']} suspended == {expected}"
                ),
                ok,
                "" if ok else f"suspended={engine.suspended}",
            )
        elif do == "expectReplaySorted":
            client = self._client(action["client"])
            registry = client.replay_registry() or []
            stamps = [(e["timestamp"], e["entrySeq"]) for e in registry]
            ok = stamps == sorted(stamps) and len(stamps) == int(action.get("length", len(stamps)))
            self._check(
                action.get("describe", f"{action['client']} replay registry is chronological"),
                ok,
                "" if ok else f"stamps={stamps}",
            )
        else:
            raise ScenarioError(f"unknown expectation {do!r}")


def run_scenario(script, *, timer_profile: Optional[str] = None) -> ScenarioReport:
    """Run one scenario from a dict, JSON text, or file path."""
    if isinstance(script, (str, bytes)) and not str(script).lstrip().startswith("{"):
        with open(script, "r", encoding="utf-8") as fh:
            script = fh.read()
    if isinstance(script, (str, bytes)):
        try:
            script = json.loads(script)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario script is not valid JSON: {exc}") from exc
    return ScenarioRunner(script, timer_profile=timer_profile).run()


def builtin_scenarios() -> list:
    """Names and parsed documents of the packaged validation scenarios."""
    from importlib import resources

    docs = []
    root = resources.files("flowdbg.scenarios")
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            docs.append(json.loads(entry.read_text(encoding="utf-8")))
    return docs


def run_suite(timer_profile: Optional[str] = None) -> tuple:
    """Run the packaged scenario suite; returns (all_passed, reports)."""
    reports = []
    for doc in builtin_scenarios():
        reports.append(run_scenario(doc, timer_profile=timer_profile))
    return all(r.passed for r in reports), reports
