from __future__ import annotations

import random

import pytest

from conftest import MIXER_DOC, chain_doc
from flowdbg.engine import (
    Engine,
    EngineStoppedError,
    HookSide,
    UnknownPortError,
    Verdict,
)
from flowdbg.runtime import VirtualScheduler
from flowdbg.values import ValueConverter, ValueTag, VariableValue, apply_converter
from flowdbg.workflow import PortDirection, parse_workflow


class Recorder:
    """Hook delegate that records events and answers from a scripted policy."""

    def __init__(self, policy=None):
        self.events = []
        self.policy = policy or (lambda ev: Verdict.PROCEED)

    def __call__(self, ev):
        self.events.append(ev)
        return self.policy(ev)

    @property
    def trace(self):
        return [(e.side, e.task_id, e.port_id, e.value.value, e.context.context_id, e.seq)
                for e in self.events]


def drain(sched: VirtualScheduler):
    while True:
        deadline = sched.next_deadline()
        if deadline is None:
            return
        sched.run_until(deadline)


def make_engine(doc, policy=None):
    sched = VirtualScheduler()
    rec = Recorder(policy)
    engine = Engine(parse_workflow(doc), rec, scheduler=sched)
    return engine, rec, sched


def expected_chain_hooks(k: int):
    """Brute-force enumeration of hook firings for one injection on a k-chain."""
    hooks = [(HookSide.BEFORE_SET_OUTPUTS, "src", "out")]
    for i in range(1, k + 1):
        hooks.append((HookSide.AFTER_SET_INPUTS, f"t{i}", "in"))
        hooks.append((HookSide.BEFORE_SET_OUTPUTS, f"t{i}", "out"))
    hooks.append((HookSide.AFTER_SET_INPUTS, "snk", "in"))
    return hooks


class TestHookOrdering:
    @pytest.mark.parametrize("k", [0, 1, 2, 3, 4, 5])
    def test_single_injection_on_chain_matches_enumeration(self, k):
        engine, rec, sched = make_engine(chain_doc(k))
        ctx = engine.inject("src", "out", VariableValue.int64(7))
        drain(sched)
        got = [(e.side, e.task_id, e.port_id) for e in rec.events]
        assert got == expected_chain_hooks(k)
        # 1+k beforeSetOutputs and 1+k afterSetInputs, one shared context
        befores = [e for e in rec.events if e.side is HookSide.BEFORE_SET_OUTPUTS]
        afters = [e for e in rec.events if e.side is HookSide.AFTER_SET_INPUTS]
        assert len(befores) == 1 + k and len(afters) == 1 + k
        assert {e.context.context_id for e in rec.events} == {ctx.context_id}
        assert [e.seq for e in rec.events] == list(range(1, 2 * (k + 1) + 1))

    def test_seq_strictly_increases_across_injections(self):
        engine, rec, sched = make_engine(chain_doc(2))
        engine.inject("src", "out", VariableValue.int64(1))
        drain(sched)
        engine.inject("src", "out", VariableValue.int64(2))
        drain(sched)
        seqs = [e.seq for e in rec.events]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)

    def test_two_engines_are_isolated(self):
        doc = chain_doc(1)
        sched = VirtualScheduler()
        rec1, rec2 = Recorder(), Recorder()
        e1 = Engine(parse_workflow(doc), rec1, scheduler=sched)
        e2 = Engine(parse_workflow(doc), rec2, scheduler=sched)
        e1.inject("src", "out", VariableValue.int64(1))
        drain(sched)
        e2.inject("src", "out", VariableValue.int64(2))
        drain(sched)
        assert [e.seq for e in rec1.events] == [e.seq for e in rec2.events]
        assert rec1.events[0].context.context_id == rec2.events[0].context.context_id == "1"


class TestContextIsolation:
    def test_interleaved_flows_keep_distinct_contexts(self):
        # Slow path on A: inject A then B; B's output lands before A's.
        engine, rec, sched = make_engine(MIXER_DOC)
        ctx_a = engine.inject("feedA", "a", VariableValue.float64(1.0))
        sched.advance(0.010)
        ctx_b = engine.inject("feedB", "b", VariableValue.float64(2.0))
        drain(sched)
        assert ctx_a.context_id != ctx_b.context_id
        sink_hits = [e for e in rec.events if e.task_id == "tank"]
        assert [e.context.context_id for e in sink_hits] == [ctx_b.context_id, ctx_a.context_id]
        # var A -> var B -> output B -> output A
        order = [(e.task_id, e.context.context_id) for e in rec.events
                 if e.task_id in ("feedA", "feedB", "tank")]
        assert order == [
            ("feedA", ctx_a.context_id),
            ("feedB", ctx_b.context_id),
            ("tank", ctx_b.context_id),
            ("tank", ctx_a.context_id),
        ]
        for e in rec.events:
            assert e.context.context_id in (ctx_a.context_id, ctx_b.context_id)

    def test_events_never_borrow_other_contexts(self):
        engine, rec, sched = make_engine(chain_doc(3))
        contexts = []
        for n in range(4):
            contexts.append(engine.inject("src", "out", VariableValue.int64(n)).context_id)
            drain(sched)
        by_value = {}
        for e in rec.events:
            by_value.setdefault(e.value.value, set()).add(e.context.context_id)
        for n, ctx in enumerate(contexts):
            assert by_value[n] == {ctx}


class TestVerdicts:
    def test_suspend_blocks_downstream_until_resume(self):
        hold = {"armed": True}

        def policy(ev):
            if hold["armed"] and ev.task_id == "t1" and ev.side is HookSide.AFTER_SET_INPUTS:
                hold["armed"] = False
                return Verdict.SUSPEND_UNTIL_RESUME
            return Verdict.PROCEED

        engine, rec, sched = make_engine(chain_doc(2), policy)
        engine.inject("src", "out", VariableValue.int64(5))
        drain(sched)
        assert engine.suspended
        assert [e.task_id for e in rec.events] == ["src", "t1"]
        assert engine.port_value("snk", "in", PortDirection.INPUT) is None
        engine.resume()
        drain(sched)
        assert not engine.suspended
        assert [e.task_id for e in rec.events] == ["src", "t1", "t1", "t2", "t2", "snk"]
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 5

    def test_resume_on_idle_engine_is_a_noop(self):
        engine, rec, sched = make_engine(chain_doc(1))
        engine.resume()
        drain(sched)
        assert rec.events == []

    def test_drop_event_suppresses_that_value_only(self):
        def policy(ev):
            if ev.side is HookSide.AFTER_SET_INPUTS and ev.task_id == "t1" and ev.value.value == 13:
                return Verdict.DROP_EVENT
            return Verdict.PROCEED

        engine, rec, sched = make_engine(chain_doc(1), policy)
        engine.inject("src", "out", VariableValue.int64(13))
        drain(sched)
        assert engine.port_value("snk", "in", PortDirection.INPUT) is None
        engine.inject("src", "out", VariableValue.int64(14))
        drain(sched)
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 14

    def test_new_events_judged_while_suspended_and_dropped(self):
        state = {"suspended": False}

        def policy(ev):
            if state["suspended"]:
                return Verdict.DROP_EVENT
            if ev.task_id == "snk":
                state["suspended"] = True
                return Verdict.SUSPEND_UNTIL_RESUME
            return Verdict.PROCEED

        engine, rec, sched = make_engine(chain_doc(1), policy)
        engine.inject("src", "out", VariableValue.int64(1))
        drain(sched)
        assert engine.suspended
        count_before = len(rec.events)
        engine.inject("src", "out", VariableValue.int64(2))  # judged, dropped
        drain(sched)
        assert len(rec.events) == count_before + 1
        assert rec.events[-1].value.value == 2
        state["suspended"] = False
        engine.resume()
        drain(sched)
        # only the original flow completed; value 2 never moved past the source
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 1
        assert all(e.value.value != 2 or e.task_id == "src" for e in rec.events)

    def test_proceed_while_suspended_queues_behind_gate(self):
        state = {"suspended": False}

        def policy(ev):
            if state["suspended"]:
                return Verdict.PROCEED  # let it through after resume
            if ev.task_id == "snk":
                state["suspended"] = True
                return Verdict.SUSPEND_UNTIL_RESUME
            return Verdict.PROCEED

        engine, rec, sched = make_engine(chain_doc(0), policy)
        engine.inject("src", "out", VariableValue.int64(1))
        drain(sched)
        # suspended at snk's afterSetInputs: value 1 is written, nothing else moves
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 1
        engine.inject("src", "out", VariableValue.int64(2))
        drain(sched)
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 1
        state["suspended"] = False
        engine.resume()
        drain(sched)
        assert engine.port_value("snk", "in", PortDirection.INPUT).value == 2


class TestInjectionErrors:
    def test_unknown_port(self):
        engine, _, _ = make_engine(chain_doc(1))
        with pytest.raises(UnknownPortError):
            engine.inject("t1", "out", VariableValue.int64(1))
        with pytest.raises(UnknownPortError):
            engine.inject("src", "nope", VariableValue.int64(1))

    def test_tag_mismatch_rejected(self):
        engine, _, _ = make_engine(chain_doc(1))
        with pytest.raises(UnknownPortError):
            engine.inject("src", "out", VariableValue.text("x"))

    def test_stopped_engine_refuses(self):
        engine, _, sched = make_engine(chain_doc(1))
        engine.stop()
        with pytest.raises(EngineStoppedError):
            engine.inject("src", "out", VariableValue.int64(1))


class TestConverterComposition:
    def test_sink_value_equals_fold_over_path(self):
        rng = random.Random(20260809)
        for _ in range(20):
            converters = [
                rng.choice([
                    ValueConverter.identity(),
                    ValueConverter.scale(rng.choice([0.5, 2.0, 1.5])),
                    ValueConverter.offset(float(rng.randint(-5, 5))),
                    ValueConverter.cast_to(ValueTag.FLOAT64),
                ])
                for _ in range(3)
            ]
            doc = chain_doc(2)
            # rebuild the chain in float64 so every converter stays legal
            for task in doc["tasks"]:
                for port in task.get("inputs", []) + task.get("outputs", []):
                    port["valueTag"] = "float64"
            for link, conv in zip(doc["links"], converters):
                link["converter"] = conv.to_json()
            engine, _, sched = make_engine(doc)
            injected = VariableValue.float64(float(rng.randint(-100, 100)))
            engine.inject("src", "out", injected)
            drain(sched)
            expected = injected
            for conv in converters:
                expected = apply_converter(conv, expected)
            assert engine.port_value("snk", "in", PortDirection.INPUT) == expected
