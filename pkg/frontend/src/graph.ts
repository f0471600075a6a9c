// SVG workflow graph: tasks as boxes, ports as pins carrying breakpoint state
// and last-seen values. Clicking a pin edits breakpoints (when permitted).

import { layoutWorkflow } from "./layout.js";
import type { PortSide, TaskJson, WorkflowJson } from "./types.js";
import { formatValue, portKey } from "./types.js";
import type { ViewModel } from "./viewModel.js";
import { portVisual } from "./viewModel.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const BOX_W = 148;
const BOX_H = 64;
const GAP_X = 110;
const GAP_Y = 48;
const PORT_STEP = 18;

export type PortClickHandler = (taskId: string, portId: string, side: PortSide, alt: boolean) => void;

interface PinPosition {
  x: number;
  y: number;
}

function el<K extends keyof SVGElementTagNameMap>(
  name: K,
  attrs: Record<string, string | number>,
  text?: string,
): SVGElementTagNameMap[K] {
  const node = document.createElementNS(SVG_NS, name);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, String(value));
  if (text !== undefined) node.textContent = text;
  return node;
}

function taskHeight(task: TaskJson): number {
  const pins = Math.max(task.inputs.length, task.outputs.length, 1);
  return Math.max(BOX_H, 28 + pins * PORT_STEP);
}

export function renderGraph(
  host: SVGSVGElement,
  workflow: WorkflowJson,
  vm: ViewModel,
  onPortClick: PortClickHandler,
): void {
  host.textContent = "";
  const placements = new Map(layoutWorkflow(workflow).map((p) => [p.taskId, p]));
  const tasksById = new Map(workflow.tasks.map((t) => [t.taskId, t]));
  const origins = new Map<string, { x: number; y: number }>();
  let maxX = 0;
  let maxY = 0;
  for (const task of workflow.tasks) {
    const place = placements.get(task.taskId)!;
    const x = 20 + place.column * (BOX_W + GAP_X);
    const y = 20 + place.row * (BOX_H + GAP_Y + 40);
    origins.set(task.taskId, { x, y });
    maxX = Math.max(maxX, x + BOX_W);
    maxY = Math.max(maxY, y + taskHeight(task));
  }
  host.setAttribute("viewBox", `0 0 ${maxX + 40} ${maxY + 40}`);

  const pinAt = (taskId: string, portId: string, side: PortSide): PinPosition => {
    const task = tasksById.get(taskId)!;
    const { x, y } = origins.get(taskId)!;
    const ports = side === "input" ? task.inputs : task.outputs;
    const index = Math.max(0, ports.findIndex((p) => p.portId === portId));
    return {
      x: side === "input" ? x : x + BOX_W,
      y: y + 30 + index * PORT_STEP,
    };
  };

  // wires first so boxes draw over them
  for (const link of workflow.links) {
    const from = pinAt(link.fromTask, link.fromPort, "output");
    const to = pinAt(link.toTask, link.toPort, "input");
    const mid = (from.x + to.x) / 2;
    const path = el("path", {
      class: "wire",
      d: `M ${from.x} ${from.y} C ${mid} ${from.y}, ${mid} ${to.y}, ${to.x} ${to.y}`,
    });
    host.appendChild(path);
    if (link.converter) {
      host.appendChild(
        el("text", { class: "wire-label", x: mid, y: (from.y + to.y) / 2 - 4 },
          link.converter.kind),
      );
    }
  }

  for (const task of workflow.tasks) {
    const { x, y } = origins.get(task.taskId)!;
    const group = el("g", { class: `task kind-${task.kind}` });
    group.appendChild(el("rect", {
      class: "task-box", x, y, rx: 8, width: BOX_W, height: taskHeight(task),
    }));
    group.appendChild(el("text", { class: "task-name", x: x + BOX_W / 2, y: y + 16 }, task.taskId));
    group.appendChild(el("text", {
      class: "task-kind", x: x + BOX_W / 2, y: y + 26 + 2,
    }, task.transformSpec ? task.transformSpec.name : task.kind));

    const renderPin = (portId: string, side: PortSide) => {
      const pos = pinAt(task.taskId, portId, side);
      const visual = portVisual(vm.state, task.taskId, portId, side);
      const pin = el("circle", {
        class: `pin pin-${visual}`,
        cx: pos.x,
        cy: pos.y,
        r: 6,
        "data-port": portKey(task.taskId, portId, side),
      });
      if (vm.breakpointsEditable) pin.classList.add("pin-editable");
      pin.addEventListener("click", (ev) =>
        onPortClick(task.taskId, portId, side, ev.shiftKey));
      group.appendChild(pin);
      const labelX = side === "input" ? pos.x + 10 : pos.x - 10;
      group.appendChild(el("text", {
        class: `port-name port-${side}`, x: labelX, y: pos.y + 3,
      }, portId));
      const value = vm.state.view.ports[portKey(task.taskId, portId, side)];
      if (value !== undefined) {
        const valueY = side === "input" ? pos.y - 9 : pos.y + 14;
        group.appendChild(el("text", {
          class: "port-value", x: labelX, y: valueY,
        }, formatValue(value)));
      }
    };

    for (const port of task.inputs) renderPin(port.portId, "input");
    for (const port of task.outputs) renderPin(port.portId, "output");
    host.appendChild(group);
  }
}
