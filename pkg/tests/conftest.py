from __future__ import annotations

import pytest

from flowdbg.agent import Agent, AgentConfig
from flowdbg.bus import LoopbackBus
from flowdbg.client import ClientConfig, DebugClient
from flowdbg.runtime import VirtualScheduler
from flowdbg.workflow import parse_workflow

PRESS_DOC = {
    "workflowId": "press",
    "name": "Press temperature monitor",
    "tasks": [
        {"taskId": "sensor", "kind": "event-source",
         "outputs": [{"portId": "temp", "valueTag": "float64"}]},
        {"taskId": "check", "kind": "transform",
         "inputs": [{"portId": "value", "valueTag": "float64"}],
         "outputs": [{"portId": "alarm", "valueTag": "bool"}],
         "transformSpec": {"name": "threshold", "params": {"limit": 50}}},
        {"taskId": "siren", "kind": "sink",
         "inputs": [{"portId": "on", "valueTag": "bool"}]},
    ],
    "links": [
        {"fromTask": "sensor", "fromPort": "temp", "toTask": "check", "toPort": "value",
         "converter": {"kind": "scale", "params": [0.5]}},
        {"fromTask": "check", "fromPort": "alarm", "toTask": "siren", "toPort": "on"},
    ],
}

MIXER_DOC = {
    "workflowId": "mixer",
    "name": "Two-feed mixer",
    "tasks": [
        {"taskId": "feedA", "kind": "event-source",
         "outputs": [{"portId": "a", "valueTag": "float64"}]},
        {"taskId": "feedB", "kind": "event-source",
         "outputs": [{"portId": "b", "valueTag": "float64"}]},
        {"taskId": "slow", "kind": "transform",
         "inputs": [{"portId": "in", "valueTag": "float64"}],
         "outputs": [{"portId": "out", "valueTag": "float64"}],
         "transformSpec": {"name": "pass-through", "delayMs": 150}},
        {"taskId": "blend", "kind": "transform",
         "inputs": [{"portId": "inA", "valueTag": "float64"},
                    {"portId": "inB", "valueTag": "float64"}],
         "outputs": [{"portId": "mix", "valueTag": "float64"}],
         "transformSpec": {"name": "sum"}},
        {"taskId": "tank", "kind": "sink",
         "inputs": [{"portId": "level", "valueTag": "float64"}]},
    ],
    "links": [
        {"fromTask": "feedA", "fromPort": "a", "toTask": "slow", "toPort": "in"},
        {"fromTask": "slow", "fromPort": "out", "toTask": "blend", "toPort": "inA"},
        {"fromTask": "feedB", "fromPort": "b", "toTask": "blend", "toPort": "inB"},
        {"fromTask": "blend", "fromPort": "mix", "toTask": "tank", "toPort": "level"},
    ],
}


def chain_doc(k: int, workflow_id: str = "chain") -> dict:
    """Linear workflow: event-source -> k pass-through transforms -> sink (int64)."""
    tasks = [
        {"taskId": "src", "kind": "event-source",
         "outputs": [{"portId": "out", "valueTag": "int64"}]},
    ]
    links = []
    prev = ("src", "out")
    for i in range(1, k + 1):
        tid = f"t{i}"
        tasks.append({
            "taskId": tid, "kind": "transform",
            "inputs": [{"portId": "in", "valueTag": "int64"}],
            "outputs": [{"portId": "out", "valueTag": "int64"}],
            "transformSpec": {"name": "pass-through"},
        })
        links.append({"fromTask": prev[0], "fromPort": prev[1], "toTask": tid, "toPort": "in"})
        prev = (tid, "out")
    tasks.append({"taskId": "snk", "kind": "sink",
                  "inputs": [{"portId": "in", "valueTag": "int64"}]})
    links.append({"fromTask": prev[0], "fromPort": prev[1], "toTask": "snk", "toPort": "in"})
    return {"workflowId": workflow_id, "name": f"chain-{k}", "tasks": tasks, "links": links}


FAST_TIMERS = dict(
    aci_request_interval=0.6,
    comm_attempt_interval=0.2,
    auto_select_window=0.1,
    aci_entry_expiry=0.6,
    request_timeout=0.15,
)


class Harness:
    """In-process topology on one virtual scheduler and a loopback bus."""

    def __init__(self):
        self.scheduler = VirtualScheduler()
        self.bus = LoopbackBus()
        self.agents: list = []
        self.clients: list = []

    def agent(self, *workflow_docs, aci_id=None, sweep_interval=30.0,
              session_expiry=35.0, sync_reply_timeout=300.0) -> Agent:
        config = AgentConfig(
            workflows=[parse_workflow(d) for d in workflow_docs],
            aci_id=aci_id,
            sweep_interval=sweep_interval,
            session_expiry=session_expiry,
            sync_reply_timeout=sync_reply_timeout,
        )
        agent = Agent(self.bus.client(self.scheduler, "agent"), self.scheduler, config).start()
        self.agents.append(agent)
        return agent

    def client(self, *workflow_docs, mes_id="mes1", **timer_overrides) -> DebugClient:
        timers = {**FAST_TIMERS, **timer_overrides}
        workflows = {d["workflowId"]: parse_workflow(d) for d in workflow_docs}
        config = ClientConfig(mes_id=mes_id, workflows=workflows, **timers)
        client = DebugClient(
            self.bus.client(self.scheduler, mes_id), self.scheduler, config
        ).start()
        self.clients.append(client)
        return client

    def events_of(self, client: DebugClient) -> list:
        recorded: list = []
        client.add_listener(recorded.append)
        return recorded

    def run(self) -> None:
        self.scheduler.run_pending()

    def advance(self, dt: float) -> None:
        self.scheduler.advance(dt)

    def close(self) -> None:
        for client in self.clients:
            client.stop()
        for agent in self.agents:
            if agent._started:
                agent.stop()
        self.scheduler.run_pending()


@pytest.fixture
def harness():
    h = Harness()
    yield h
    h.close()


def linked_client(h: Harness, *, docs=(PRESS_DOC,), mes_id="mes1"):
    """Agent + client brought to the linked phase with availability known."""
    agent = h.agent(*docs, aci_id="aci-a1")
    client = h.client(*docs, mes_id=mes_id)
    client.handle_command({"cmd": "selectWorkflow", "workflowId": docs[0]["workflowId"]})
    h.run()
    h.advance(0.1)  # auto-select window
    h.advance(0.05)  # first comm round trip + availability refresh
    snap = client.snapshot()
    assert snap["phase"] == "linked" and snap["linkStatus"] == "up", snap
    return agent, client
