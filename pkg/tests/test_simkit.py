from __future__ import annotations

import json

import pytest

from conftest import MIXER_DOC, PRESS_DOC
from flowdbg.engine import Engine, UnknownPortError
from flowdbg.runtime import VirtualScheduler
from flowdbg.simkit import (
    DeviceScript,
    ScenarioError,
    ScenarioRunner,
    builtin_scenarios,
    run_device,
    run_scenario,
)
from flowdbg.values import VariableValue
from flowdbg.workflow import parse_workflow


def fv(x):
    return {"tag": "float64", "value": x}


class TestDeviceScript:
    def make_engine(self):
        sched = VirtualScheduler()
        return Engine(parse_workflow(PRESS_DOC), scheduler=sched), sched

    def test_two_steps_produce_two_contexts_and_log_rows(self):
        engine, sched = self.make_engine()
        script = DeviceScript.from_json({
            "workflowId": "press",
            "steps": [
                {"atMs": 0, "taskId": "sensor", "portId": "temp", "value": fv(1.0)},
                {"atMs": 100, "taskId": "sensor", "portId": "temp", "value": fv(2.0)},
            ],
        })
        run = run_device(script, engine, sched)
        sched.advance(0.2)
        assert run.done
        assert [t for t, _ in run.log] == [0.0, 0.1]
        assert [c for _, c in run.log] == ["1", "2"]

    def test_offsets_must_be_non_decreasing(self):
        with pytest.raises(ValueError):
            DeviceScript.from_json({
                "workflowId": "press",
                "steps": [
                    {"atMs": 100, "taskId": "sensor", "portId": "temp", "value": fv(1.0)},
                    {"atMs": 50, "taskId": "sensor", "portId": "temp", "value": fv(2.0)},
                ],
            })

    def test_transform_port_target_rejected_up_front(self):
        engine, sched = self.make_engine()
        script = DeviceScript.from_json({
            "workflowId": "press",
            "steps": [{"atMs": 0, "taskId": "check", "portId": "alarm", "value": fv(1.0)}],
        })
        with pytest.raises(UnknownPortError):
            run_device(script, engine, sched)

    def test_equal_offsets_inject_in_list_order(self):
        engine, sched = self.make_engine()
        values = []
        engine._delegate = lambda ev: values.append(ev.value.value) or __import__(
            "flowdbg.engine", fromlist=["Verdict"]).Verdict.PROCEED
        script = DeviceScript.from_json({
            "workflowId": "press",
            "steps": [
                {"atMs": 10, "taskId": "sensor", "portId": "temp", "value": fv(1.0)},
                {"atMs": 10, "taskId": "sensor", "portId": "temp", "value": fv(2.0)},
                {"atMs": 10, "taskId": "sensor", "portId": "temp", "value": fv(3.0)},
            ],
        })
        run = run_device(script, engine, sched)
        sched.advance(0.05)
        assert [c for _, c in run.log] == ["1", "2", "3"]
        source_values = [v for v in values if v in (1.0, 2.0, 3.0)]
        assert source_values[:3] == [1.0, 2.0, 3.0]


def minimal_scenario(extra_steps=None):
    return {
        "name": "minimal",
        "workflows": {"press": PRESS_DOC},
        "agents": {"a1": {"aciId": "aci-a1", "workflows": ["press"]}},
        "clients": {"mes1": {"workflows": ["press"]}},
        "steps": [
            {"do": "startAgent", "agent": "a1"},
            {"do": "client", "client": "mes1",
             "command": {"cmd": "selectWorkflow", "workflowId": "press"}},
            {"do": "expectState", "client": "mes1", "path": "linkStatus",
             "equals": "up", "withinMs": 3000},
        ] + (extra_steps or []),
    }


class TestScenarioRunner:
    def test_minimal_scenario_passes(self):
        report = run_scenario(minimal_scenario())
        assert report.passed
        assert all(c.passed for c in report.checks)
        assert any("teardown" in c.description for c in report.checks)

    def test_failed_expectation_is_reported_not_raised(self):
        report = run_scenario(minimal_scenario([
            {"do": "expectState", "client": "mes1", "path": "phase",
             "equals": "replaying", "withinMs": 100},
        ]))
        assert not report.passed
        failed = [c for c in report.checks if not c.passed]
        assert failed and "replaying" in failed[0].description

    def test_setup_problems_raise_scenario_error(self):
        with pytest.raises(ScenarioError):
            run_scenario({"workflows": {}})  # no name
        with pytest.raises(ScenarioError):
            run_scenario({"name": "x", "steps": [{"do": "startAgent", "agent": "ghost"}]})
        with pytest.raises(ScenarioError):
            run_scenario({"name": "x", "workflows": {"w": {"workflowId": "w"}},
                          "steps": []})
        with pytest.raises(ScenarioError):
            run_scenario({"name": "x", "steps": [{"do": "teleport"}]})
        with pytest.raises(ScenarioError):
            ScenarioRunner({"name": "x"}, timer_profile="warp")

    def test_device_action_and_engine_expectation(self):
        report = run_scenario(minimal_scenario([
            {"do": "client", "client": "mes1",
             "command": {"cmd": "editBreakpoint", "action": "add",
                         "breakpoint": {"taskId": "siren", "portId": "on",
                                        "side": "input", "enabled": True}}},
            {"do": "client", "client": "mes1", "command": {"cmd": "start"}},
            {"do": "expectState", "client": "mes1", "path": "phase",
             "equals": "debugging", "withinMs": 3000},
            {"do": "device", "agent": "a1", "workflowId": "press",
             "taskId": "sensor", "portId": "temp", "value": fv(120.0)},
            {"do": "expectEngine", "agent": "a1", "workflowId": "press",
             "suspended": True, "withinMs": 3000},
            {"do": "client", "client": "mes1", "command": {"cmd": "resume"}},
            {"do": "expectEngine", "agent": "a1", "workflowId": "press",
             "suspended": False, "withinMs": 3000},
        ]))
        assert report.passed, [c for c in report.checks if not c.passed]

    def test_report_json_shape(self):
        report = run_scenario(minimal_scenario())
        doc = json.loads(json.dumps(report.to_json()))
        assert doc["name"] == "minimal" and doc["passed"] is True
        assert doc["checks"] and doc["transcript"]


class TestBuiltinSuite:
    def test_twelve_scenarios_ship(self):
        docs = builtin_scenarios()
        assert len(docs) == 12
        assert all("name" in d and d["steps"] for d in docs)

    def test_one_builtin_scenario_under_both_profiles(self):
        doc = builtin_scenarios()[0]
        assert run_scenario(doc, timer_profile="fast").passed
        assert run_scenario(doc, timer_profile="paper").passed

    def test_paper_profile_is_deterministic(self):
        doc = next(d for d in builtin_scenarios() if "stacks" in d["name"])
        t1 = run_scenario(doc, timer_profile="paper").transcript
        t2 = run_scenario(doc, timer_profile="paper").transcript
        assert t1 == t2  # identical virtual-time schedule, identical run
