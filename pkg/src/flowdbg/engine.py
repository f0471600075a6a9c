"""Event-driven workflow engine with debug hooks and a resumable pause gate.

Execution model
---------------
Each injected variable change opens a fresh execution context (a "flow") and
propagates along links until it reaches ports with no outgoing link. Every
port write fires a hook: `beforeSetOutputs` before an output value is exposed
to its links, `afterSetInputs` after an input value is written. The hook
delegate answers with a verdict:

* PROCEED - keep propagating.
* SUSPEND_UNTIL_RESUME - park the engine right here; `resume()` continues
  from the parked step. At most one step is parked at a time.
* DROP_EVENT - discard this value's downstream propagation only.

While suspended, no propagation step runs, but newly injected changes are
still offered to the delegate so it can decide to drop them; changes it lets
through queue up behind the gate. All engine work runs as callbacks on the
scheduler passed in, so one engine is a single logical event loop; `inject`
and `resume` may be called from any thread.

Transforms recompute on every input write (unwritten sibling inputs read as
their tag's zero value) and may declare a latency (`delayMs`) between the
input write and the recomputed output becoming visible.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .values import VariableValue, apply_converter
from .workflow import (
    PortDirection,
    TaskKind,
    WorkflowDefinition,
    run_transform,
)

log = logging.getLogger(__name__)


class UnknownPortError(LookupError):
    """The (task, port) pair does not name an injectable event-source output."""


class EngineStoppedError(RuntimeError):
    """The engine no longer accepts variable changes."""


class HookSide(str, Enum):
    BEFORE_SET_OUTPUTS = "beforeSetOutputs"
    AFTER_SET_INPUTS = "afterSetInputs"

    @property
    def port_direction(self) -> PortDirection:
        if self is HookSide.BEFORE_SET_OUTPUTS:
            return PortDirection.OUTPUT
        return PortDirection.INPUT


class Verdict(Enum):
    PROCEED = "proceed"
    SUSPEND_UNTIL_RESUME = "suspendUntilResume"
    DROP_EVENT = "dropEvent"


@dataclass(frozen=True)
class ExecutionContext:
    context_id: str
    origin_task: str
    origin_port: str
    created_at: float


@dataclass(frozen=True)
class HookEvent:
    side: HookSide
    task_id: str
    port_id: str
    value: VariableValue
    context: ExecutionContext
    seq: int


HookDelegate = Callable[[HookEvent], Verdict]


def _proceed(_ev: HookEvent) -> Verdict:
    return Verdict.PROCEED


class Engine:
    """Runs one workflow definition; see the module docstring for semantics."""

    def __init__(
        self,
        definition: WorkflowDefinition,
        delegate: Optional[HookDelegate] = None,
        *,
        scheduler,
        context_ids=None,
    ):
        self.definition = definition
        self._delegate = delegate or _proceed
        self._scheduler = scheduler
        self._context_ids = context_ids if context_ids is not None else itertools.count(1)
        self._seq = 0
        self._stopped = False
        self._gate_closed = False
        self._resume_continuation: Optional[Callable[[], None]] = None
        self._parked: deque = deque()
        self._values: dict = {}
        self._sources = {
            (t.task_id, p.port_id)
            for t in definition.tasks
            if t.kind is TaskKind.EVENT_SOURCE
            for p in t.outputs
        }

    # -- public surface (thread-safe) ---------------------------------------

    def inject(self, task_id: str, port_id: str, value: VariableValue) -> ExecutionContext:
        """Feed an equipment variable change into an event-source output."""
        if self._stopped:
            raise EngineStoppedError(self.definition.workflow_id)
        self.validate_injection(task_id, port_id, value)
        ctx = ExecutionContext(
            context_id=str(next(self._context_ids)),
            origin_task=task_id,
            origin_port=port_id,
            created_at=self._scheduler.now(),
        )
        self._scheduler.call_soon(self._do_inject, ctx, task_id, port_id, value)
        return ctx

    def resume(self) -> None:
        """Continue from the parked step; no-op when nothing is suspended."""
        self._scheduler.call_soon(self._do_resume)

    def stop(self) -> None:
        self._stopped = True
        self._scheduler.call_soon(self._do_stop)

    @property
    def suspended(self) -> bool:
        return self._gate_closed

    @property
    def stopped(self) -> bool:
        return self._stopped

    def port_value(self, task_id: str, port_id: str, direction: PortDirection):
        return self._values.get((task_id, port_id, direction))

    def validate_injection(self, task_id: str, port_id: str, value: VariableValue) -> None:
        if (task_id, port_id) not in self._sources:
            raise UnknownPortError(f"{task_id}.{port_id} is not an event-source output")
        port = self.definition.task(task_id).output(port_id)
        if value.tag is not port.value_tag:
            raise UnknownPortError(
                f"{task_id}.{port_id} expects {port.value_tag.value}, got {value.tag.value}"
            )

    # -- loop-confined internals ---------------------------------------------

    def _fire_hook(self, side: HookSide, task_id: str, port_id: str, value, ctx) -> Verdict:
        self._seq += 1
        event = HookEvent(side, task_id, port_id, value, ctx, self._seq)
        try:
            verdict = self._delegate(event)
        except Exception:
            log.exception("hook delegate failed; treating as proceed")
            return Verdict.PROCEED
        return verdict if isinstance(verdict, Verdict) else Verdict.PROCEED

    def _do_inject(self, ctx, task_id, port_id, value) -> None:
        # Judged even while suspended so the delegate can drop new events.
        if self._stopped:
            return
        verdict = self._fire_hook(HookSide.BEFORE_SET_OUTPUTS, task_id, port_id, value, ctx)
        if verdict is Verdict.DROP_EVENT:
            return
        effects = lambda: self._output_effects(ctx, task_id, port_id, value)
        if verdict is Verdict.SUSPEND_UNTIL_RESUME and not self._gate_closed:
            self._gate_closed = True
            self._resume_continuation = effects
            return
        if self._gate_closed:
            if verdict is Verdict.SUSPEND_UNTIL_RESUME:
                log.warning("suspend verdict while already suspended; queuing instead")
            self._parked.append(effects)
            return
        effects()

    def _step(self, fn: Callable[[], None]) -> None:
        if self._stopped:
            return
        if self._gate_closed:
            self._parked.append(fn)
            return
        fn()

    def _do_resume(self) -> None:
        if self._stopped or not self._gate_closed:
            return
        self._gate_closed = False
        continuation = self._resume_continuation
        self._resume_continuation = None
        parked = list(self._parked)
        self._parked.clear()
        for fn in parked:
            self._scheduler.call_soon(self._step, fn)
        if continuation is not None:
            continuation()

    def _do_stop(self) -> None:
        self._gate_closed = False
        self._resume_continuation = None
        self._parked.clear()

    def _output_write(self, ctx, task_id, port_id, value) -> None:
        verdict = self._fire_hook(HookSide.BEFORE_SET_OUTPUTS, task_id, port_id, value, ctx)
        if verdict is Verdict.DROP_EVENT:
            return
        if verdict is Verdict.SUSPEND_UNTIL_RESUME:
            self._gate_closed = True
            self._resume_continuation = lambda: self._output_effects(ctx, task_id, port_id, value)
            return
        self._output_effects(ctx, task_id, port_id, value)

    def _output_effects(self, ctx, task_id, port_id, value) -> None:
        self._values[(task_id, port_id, PortDirection.OUTPUT)] = value
        for link in self.definition.links_from(task_id, port_id):
            if link.converter is not None:
                try:
                    forwarded = apply_converter(link.converter, value)
                except Exception:
                    log.exception(
                        "converter failed on %s.%s -> %s.%s; branch dropped",
                        task_id, port_id, link.to_task, link.to_port,
                    )
                    continue
            else:
                forwarded = value
            to_task, to_port = link.to_task, link.to_port
            self._scheduler.call_soon(
                self._step, lambda t=to_task, p=to_port, v=forwarded: self._input_write(ctx, t, p, v)
            )

    def _input_write(self, ctx, task_id, port_id, value) -> None:
        self._values[(task_id, port_id, PortDirection.INPUT)] = value
        verdict = self._fire_hook(HookSide.AFTER_SET_INPUTS, task_id, port_id, value, ctx)
        if verdict is Verdict.DROP_EVENT:
            return
        if verdict is Verdict.SUSPEND_UNTIL_RESUME:
            self._gate_closed = True
            self._resume_continuation = lambda: self._input_effects(ctx, task_id, port_id)
            return
        self._input_effects(ctx, task_id, port_id)

    def _input_effects(self, ctx, task_id, trigger_port) -> None:
        task = self.definition.task(task_id)
        if task.kind is not TaskKind.TRANSFORM:
            return  # end of branch (sink or linkless port)
        inputs = {
            p.port_id: self._values[(task_id, p.port_id, PortDirection.INPUT)]
            for p in task.inputs
            if (task_id, p.port_id, PortDirection.INPUT) in self._values
        }
        try:
            result = run_transform(task, inputs, trigger_port)
        except Exception:
            log.exception("transform %s failed; flow %s halted here", task_id, ctx.context_id)
            return
        delay = (task.transform_spec.delay_ms or 0.0) / 1000.0
        for port in task.outputs:
            step = lambda p=port.port_id: self._output_write(ctx, task_id, p, result)
            if delay > 0:
                self._scheduler.call_later(delay, self._step, step)
            else:
                self._scheduler.call_soon(self._step, step)
