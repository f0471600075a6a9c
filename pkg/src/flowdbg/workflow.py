"""Workflow graph definitions: the JSON file format, validation, transforms.

A workflow is a DAG of tasks exchanging tagged values over links. Event-source
tasks emit values when the device (or a debugger in mock mode) injects a
variable change; transform tasks recompute their outputs whenever an input is
written; sinks terminate branches. Links may carry one value converter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .values import (
    ConversionError,
    ValueConverter,
    ValueTag,
    VariableValue,
    converter_output_tag,
)


class WorkflowSyntaxError(ValueError):
    """The document is not a well-formed workflow file."""


class WorkflowValidationError(ValueError):
    """The graph violates a structural invariant."""

    def __init__(self, message: str, element: Optional[str] = None):
        super().__init__(message if element is None else f"{message}: {element}")
        self.element = element


class TaskKind(str, Enum):
    EVENT_SOURCE = "event-source"
    TRANSFORM = "transform"
    SINK = "sink"


class PortDirection(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


@dataclass(frozen=True)
class PortDefinition:
    port_id: str
    value_tag: ValueTag
    direction: PortDirection


@dataclass(frozen=True)
class TransformSpec:
    name: str
    params: dict = field(default_factory=dict)
    delay_ms: float = 0.0


@dataclass(frozen=True)
class TaskDefinition:
    task_id: str
    kind: TaskKind
    inputs: tuple
    outputs: tuple
    transform_spec: Optional[TransformSpec] = None

    def input(self, port_id: str) -> Optional[PortDefinition]:
        return next((p for p in self.inputs if p.port_id == port_id), None)

    def output(self, port_id: str) -> Optional[PortDefinition]:
        return next((p for p in self.outputs if p.port_id == port_id), None)


@dataclass(frozen=True)
class LinkDefinition:
    from_task: str
    from_port: str
    to_task: str
    to_port: str
    converter: Optional[ValueConverter] = None


@dataclass(frozen=True)
class WorkflowDefinition:
    workflow_id: str
    name: str
    tasks: tuple
    links: tuple

    def task(self, task_id: str) -> TaskDefinition:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    def links_from(self, task_id: str, port_id: str) -> list:
        return [l for l in self.links if l.from_task == task_id and l.from_port == port_id]

    def links_into(self, task_id: str, port_id: str) -> list:
        return [l for l in self.links if l.to_task == task_id and l.to_port == port_id]

    def to_json(self) -> dict:
        def port(p: PortDefinition) -> dict:
            return {"portId": p.port_id, "valueTag": p.value_tag.value}

        tasks = []
        for t in self.tasks:
            doc = {
                "taskId": t.task_id,
                "kind": t.kind.value,
                "inputs": [port(p) for p in t.inputs],
                "outputs": [port(p) for p in t.outputs],
            }
            if t.transform_spec is not None:
                spec = {"name": t.transform_spec.name}
                if t.transform_spec.params:
                    spec["params"] = dict(t.transform_spec.params)
                if t.transform_spec.delay_ms:
                    spec["delayMs"] = t.transform_spec.delay_ms
                doc["transformSpec"] = spec
            tasks.append(doc)
        links = []
        for l in self.links:
            doc = {
                "fromTask": l.from_task,
                "fromPort": l.from_port,
                "toTask": l.to_task,
                "toPort": l.to_port,
            }
            if l.converter is not None:
                doc["converter"] = l.converter.to_json()
            links.append(doc)
        return {"workflowId": self.workflow_id, "name": self.name, "tasks": tasks, "links": links}


# --- built-in transform vocabulary -----------------------------------------

_ZERO = {
    ValueTag.BOOL: VariableValue.bool_(False),
    ValueTag.INT64: VariableValue.int64(0),
    ValueTag.FLOAT64: VariableValue.float64(0.0),
    ValueTag.TEXT: VariableValue.text(""),
}


def _infer_pass_through(task: TaskDefinition) -> ValueTag:
    if len(task.inputs) != 1:
        raise WorkflowValidationError("pass-through takes exactly one input", task.task_id)
    return task.inputs[0].value_tag


def _run_pass_through(task, inputs, trigger_port, params) -> VariableValue:
    return inputs[task.inputs[0].port_id]


def _infer_sum(task: TaskDefinition) -> ValueTag:
    tags = {p.value_tag for p in task.inputs}
    if not tags <= {ValueTag.INT64, ValueTag.FLOAT64} or len(tags) != 1:
        raise WorkflowValidationError("sum inputs must share one numeric tag", task.task_id)
    return task.inputs[0].value_tag


def _run_sum(task, inputs, trigger_port, params) -> VariableValue:
    tag = task.inputs[0].value_tag
    total = sum(inputs[p.port_id].value for p in task.inputs)
    return VariableValue.int64(total) if tag is ValueTag.INT64 else VariableValue.float64(total)


def _infer_threshold(task: TaskDefinition) -> ValueTag:
    if len(task.inputs) != 1 or task.inputs[0].value_tag not in (ValueTag.INT64, ValueTag.FLOAT64):
        raise WorkflowValidationError("threshold takes exactly one numeric input", task.task_id)
    return ValueTag.BOOL


def _run_threshold(task, inputs, trigger_port, params) -> VariableValue:
    limit = float(params.get("limit", 0.0))
    return VariableValue.bool_(inputs[task.inputs[0].port_id].value >= limit)


def _infer_concat(task: TaskDefinition) -> ValueTag:
    if any(p.value_tag is not ValueTag.TEXT for p in task.inputs):
        raise WorkflowValidationError("concat-text inputs must all be text", task.task_id)
    return ValueTag.TEXT


def _run_concat(task, inputs, trigger_port, params) -> VariableValue:
    sep = str(params.get("separator", ""))
    return VariableValue.text(sep.join(inputs[p.port_id].value for p in task.inputs))


TRANSFORMS: dict = {
    "pass-through": (_infer_pass_through, _run_pass_through),
    "sum": (_infer_sum, _run_sum),
    "threshold": (_infer_threshold, _run_threshold),
    "concat-text": (_infer_concat, _run_concat),
}


def transform_output_tag(task: TaskDefinition) -> ValueTag:
    spec = task.transform_spec
    if spec is None or spec.name not in TRANSFORMS:
        name = None if spec is None else spec.name
        raise WorkflowValidationError(f"unknown transform {name!r}", task.task_id)
    return TRANSFORMS[spec.name][0](task)


def run_transform(task: TaskDefinition, input_values: dict, trigger_port: str) -> VariableValue:
    """Compute the transform result; inputs never written use their tag's zero."""
    spec = task.transform_spec
    filled = {
        p.port_id: input_values.get(p.port_id, _ZERO[p.value_tag]) for p in task.inputs
    }
    return TRANSFORMS[spec.name][1](task, filled, trigger_port, spec.params)


# --- parsing ----------------------------------------------------------------


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise WorkflowSyntaxError(f"missing {key!r} in {where}")
    return doc[key]


def _parse_port(doc: dict, direction: PortDirection, where: str) -> PortDefinition:
    if not isinstance(doc, dict):
        raise WorkflowSyntaxError(f"port entry in {where} must be an object")
    port_id = _require(doc, "portId", where)
    try:
        tag = ValueTag(_require(doc, "valueTag", where))
    except ValueError as exc:
        raise WorkflowSyntaxError(f"bad valueTag in {where}: {exc}") from exc
    if not isinstance(port_id, str) or not port_id:
        raise WorkflowSyntaxError(f"portId in {where} must be a non-empty string")
    return PortDefinition(port_id, tag, direction)


def _parse_task(doc: dict) -> TaskDefinition:
    if not isinstance(doc, dict):
        raise WorkflowSyntaxError("task entry must be an object")
    task_id = _require(doc, "taskId", "task")
    try:
        kind = TaskKind(_require(doc, "kind", f"task {task_id}"))
    except ValueError as exc:
        raise WorkflowSyntaxError(f"bad kind in task {task_id}: {exc}") from exc
    where = f"task {task_id}"
    inputs = tuple(_parse_port(p, PortDirection.INPUT, where) for p in doc.get("inputs", []))
    outputs = tuple(_parse_port(p, PortDirection.OUTPUT, where) for p in doc.get("outputs", []))
    spec = None
    if "transformSpec" in doc and doc["transformSpec"] is not None:
        sd = doc["transformSpec"]
        if not isinstance(sd, dict) or "name" not in sd:
            raise WorkflowSyntaxError(f"transformSpec of {task_id} must name a transform")
        spec = TransformSpec(
            name=sd["name"],
            params=dict(sd.get("params", {})),
            delay_ms=float(sd.get("delayMs", 0.0)),
        )
    return TaskDefinition(task_id, kind, inputs, outputs, spec)


def _parse_link(doc: dict) -> LinkDefinition:
    if not isinstance(doc, dict):
        raise WorkflowSyntaxError("link entry must be an object")
    conv = None
    if "converter" in doc and doc["converter"] is not None:
        try:
            conv = ValueConverter.from_json(doc["converter"])
        except ConversionError as exc:
            raise WorkflowSyntaxError(str(exc)) from exc
    return LinkDefinition(
        from_task=_require(doc, "fromTask", "link"),
        from_port=_require(doc, "fromPort", "link"),
        to_task=_require(doc, "toTask", "link"),
        to_port=_require(doc, "toPort", "link"),
        converter=conv,
    )


def parse_workflow(document) -> WorkflowDefinition:
    """Parse and validate a workflow document (JSON text or parsed object)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise WorkflowSyntaxError(f"not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise WorkflowSyntaxError("workflow document must be a JSON object")
    workflow_id = _require(document, "workflowId", "workflow")
    if not isinstance(workflow_id, str) or not workflow_id:
        raise WorkflowSyntaxError("workflowId must be a non-empty string")
    name = document.get("name", workflow_id)
    tasks = tuple(_parse_task(t) for t in _require(document, "tasks", "workflow"))
    links = tuple(_parse_link(l) for l in document.get("links", []))
    defn = WorkflowDefinition(workflow_id, name, tasks, links)
    validate_workflow(defn)
    return defn


def load_workflow(path) -> WorkflowDefinition:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_workflow(fh.read())


def validate_workflow(defn: WorkflowDefinition) -> None:
    seen = set()
    for t in defn.tasks:
        if t.task_id in seen:
            raise WorkflowValidationError("duplicate task id", t.task_id)
        seen.add(t.task_id)
        ports = [p.port_id for p in t.inputs] + [p.port_id for p in t.outputs]
        if len(ports) != len(set(ports)):
            raise WorkflowValidationError("duplicate port id within task", t.task_id)
        if t.kind is TaskKind.EVENT_SOURCE and (t.inputs or not t.outputs):
            raise WorkflowValidationError("event-source needs outputs and no inputs", t.task_id)
        if t.kind is TaskKind.SINK and t.outputs:
            raise WorkflowValidationError("sink must not have outputs", t.task_id)
        if t.kind is TaskKind.TRANSFORM:
            if not t.inputs or not t.outputs:
                raise WorkflowValidationError("transform needs inputs and outputs", t.task_id)
            result_tag = transform_output_tag(t)
            for p in t.outputs:
                if p.value_tag is not result_tag:
                    raise WorkflowValidationError(
                        f"output tag {p.value_tag.value} != transform result {result_tag.value}",
                        f"{t.task_id}.{p.port_id}",
                    )

    by_id = {t.task_id: t for t in defn.tasks}
    for l in defn.links:
        label = f"{l.from_task}.{l.from_port}->{l.to_task}.{l.to_port}"
        if l.from_task not in by_id:
            raise WorkflowValidationError("link from unknown task", l.from_task)
        if l.to_task not in by_id:
            raise WorkflowValidationError("link to unknown task", l.to_task)
        src = by_id[l.from_task].output(l.from_port)
        if src is None:
            raise WorkflowValidationError("link source is not an output port", label)
        dst = by_id[l.to_task].input(l.to_port)
        if dst is None:
            raise WorkflowValidationError("link target is not an input port", label)
        conv = l.converter or ValueConverter.identity()
        try:
            out_tag = converter_output_tag(conv, src.value_tag)
        except ConversionError as exc:
            raise WorkflowValidationError(f"bad converter ({exc})", label) from exc
        if out_tag is not dst.value_tag:
            raise WorkflowValidationError(
                f"link carries {out_tag.value} into {dst.value_tag.value} port", label
            )

    _check_acyclic(defn)
    _check_reachability(defn, by_id)


def _check_acyclic(defn: WorkflowDefinition) -> None:
    adjacency: dict = {t.task_id: set() for t in defn.tasks}
    for l in defn.links:
        adjacency[l.from_task].add(l.to_task)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {t: WHITE for t in adjacency}

    def visit(node: str, trail: list) -> None:
        color[node] = GREY
        trail.append(node)
        for nxt in sorted(adjacency[node]):
            if color[nxt] == GREY:
                cycle = trail[trail.index(nxt):] + [nxt]
                raise WorkflowValidationError("cycle", "->".join(cycle))
            if color[nxt] == WHITE:
                visit(nxt, trail)
        trail.pop()
        color[node] = BLACK

    for node in sorted(adjacency):
        if color[node] == WHITE:
            visit(node, [])


def _check_reachability(defn: WorkflowDefinition, by_id: dict) -> None:
    # A task is live once some event-source can feed it through the link graph.
    live = {t.task_id for t in defn.tasks if t.kind is TaskKind.EVENT_SOURCE}
    changed = True
    while changed:
        changed = False
        for l in defn.links:
            if l.from_task in live and l.to_task not in live:
                live.add(l.to_task)
                changed = True
    for t in defn.tasks:
        if t.kind is not TaskKind.TRANSFORM:
            continue
        for p in t.inputs:
            feeds = defn.links_into(t.task_id, p.port_id)
            if not feeds or not any(l.from_task in live for l in feeds):
                raise WorkflowValidationError(
                    "transform input not reachable from an event-source",
                    f"{t.task_id}.{p.port_id}",
                )
