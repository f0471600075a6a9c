// Debugger page wiring: one WebSocket, strictly ordered commands, and a view
// that is recomputed from the latest stateChanged event alone.

import { FrontendConnection } from "./connection.js";
import { renderGraph } from "./graph.js";
import { buildTimelineRows } from "./timeline.js";
import type {
  CatalogEntryJson,
  ClientState,
  DebugMode,
  FrontendEvent,
  PortSide,
  ValueTag,
  VariableValue,
} from "./types.js";
import { formatValue } from "./types.js";
import { buildViewModel, type ViewModel } from "./viewModel.js";

const MODES: { value: DebugMode; label: string }[] = [
  { value: "mock", label: "Mock" },
  { value: "synchronous", label: "Synchronous" },
  { value: "snapshot", label: "Snapshot" },
  { value: "profiler", label: "Profiler" },
];

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

class DebuggerPage {
  private state: ClientState | null = null;
  private catalog: CatalogEntryJson[] = [];
  private connected = false;
  private notices: string[] = [];
  private readonly connection: FrontendConnection;

  constructor(url: string) {
    this.connection = new FrontendConnection(
      url,
      (event) => this.onEvent(event),
      (connected) => {
        this.connected = connected;
        this.render();
      },
    );
    ($("mode") as HTMLSelectElement).addEventListener("change", (ev) => {
      this.send({ cmd: "setMode", mode: (ev.target as HTMLSelectElement).value as DebugMode });
    });
    $("start").addEventListener("click", () => this.send({ cmd: "start" }));
    $("stop").addEventListener("click", () => this.send({ cmd: "stop" }));
    $("resume").addEventListener("click", () => this.send({ cmd: "resume" }));
    $("replay-prev").addEventListener("click", () =>
      this.send({ cmd: "replayStep", direction: "previous" }));
    $("replay-next").addEventListener("click", () =>
      this.send({ cmd: "replayStep", direction: "next" }));
    $("replay-discard").addEventListener("click", () => this.send({ cmd: "discardReplay" }));
    $("mock-send").addEventListener("click", () => this.mockInject());
    ($("workflow-select") as HTMLSelectElement).addEventListener("change", (ev) => {
      const id = (ev.target as HTMLSelectElement).value;
      if (id) this.send({ cmd: "selectWorkflow", workflowId: id });
    });
  }

  private send(command: Parameters<FrontendConnection["send"]>[0]): void {
    // optimistic UI changes are forbidden: the next stateChanged re-renders
    this.connection.send(command);
  }

  private onEvent(event: FrontendEvent): void {
    switch (event.type) {
      case "stateChanged":
        this.state = event.state;
        break;
      case "catalogChanged":
        this.catalog = event.catalog;
        break;
      case "linkChanged":
        this.notice(`controller link ${event.status}`);
        break;
      case "commandRejected":
        this.notice(`${event.cmd} rejected: ${event.reason}`);
        break;
      case "startTimeout":
        this.notice("start request timed out");
        break;
      case "stopTimeout":
        this.notice("stop request timed out; cleared locally");
        break;
      default:
        break; // breakpointTriggered / replayPosition arrive with stateChanged
    }
    this.render();
  }

  private notice(text: string): void {
    this.notices.unshift(text);
    this.notices = this.notices.slice(0, 4);
  }

  private mockInject(): void {
    const task = ($("mock-task") as HTMLSelectElement).value;
    if (!task || !this.state?.workflow) return;
    const [taskId, portId] = task.split("/");
    const source = this.state.workflow.tasks.find((t) => t.taskId === taskId);
    const tag = (source?.outputs.find((p) => p.portId === portId)?.valueTag ?? "float64") as ValueTag;
    const raw = ($("mock-value") as HTMLInputElement).value.trim();
    let value: VariableValue;
    if (tag === "bool") value = { tag, value: raw === "true" || raw === "1" };
    else if (tag === "int64") value = { tag, value: parseInt(raw || "0", 10) };
    else if (tag === "float64") value = { tag, value: parseFloat(raw || "0") };
    else value = { tag, value: raw };
    this.send({ cmd: "mockInject", taskId, portId, value });
  }

  private onPortClick(taskId: string, portId: string, side: PortSide, toggle: boolean): void {
    if (!this.state) return;
    const vm = this.viewModel();
    if (!vm.breakpointsEditable) return; // inert click, no command
    const existing = this.state.breakpoints.find(
      (b) => b.taskId === taskId && b.portId === portId && b.side === side,
    );
    if (toggle && existing) {
      this.send({
        cmd: "editBreakpoint",
        action: "toggle",
        breakpoint: { taskId, portId, side, enabled: !existing.enabled },
      });
      return;
    }
    this.send({
      cmd: "editBreakpoint",
      action: existing ? "remove" : "add",
      breakpoint: { taskId, portId, side, enabled: true },
    });
  }

  private viewModel(): ViewModel {
    const running = this.catalog.filter((e) => e.running).length;
    return buildViewModel(this.state as ClientState, this.connected, running);
  }

  private render(): void {
    $("banner").hidden = this.connected;
    $("notices").textContent = this.notices.join("  ·  ");
    if (!this.state) return;
    const vm = this.viewModel();
    const state = vm.state;

    const workflowSelect = $("workflow-select") as HTMLSelectElement;
    if (!workflowSelect.value && state.workflowId) workflowSelect.value = state.workflowId;

    // ribbon: selected controller id plus current availability
    $("ribbon-aci").textContent = state.selectedAci ?? "no controller selected";
    $("ribbon-link").textContent = state.linkStatus;
    $("ribbon-link").className = `pill link-${state.linkStatus}`;
    $("ribbon-avail").textContent = state.workflowAvailable ? "available" : "unavailable";
    $("ribbon-avail").className = `pill ${state.workflowAvailable ? "ok" : "warn"}`;
    $("ribbon-session").textContent =
      state.sessionId ?? (state.phase === "replaying" ? "replay" : "-");
    $("ribbon-phase").textContent = state.phase;

    const mode = $("mode") as HTMLSelectElement;
    if (mode.value !== state.mode) mode.value = state.mode;
    mode.disabled = !vm.modeSelectable;
    ($("start") as HTMLButtonElement).disabled = !vm.startEnabled;
    ($("stop") as HTMLButtonElement).disabled = !vm.stopEnabled;
    ($("resume") as HTMLButtonElement).disabled = !vm.resumeEnabled;
    $("queue-badge").textContent = state.queueLength > 1 ? `${state.queueLength - 1} stacked` : "";
    $("violation").hidden = !state.protocolViolation;

    this.renderCatalog(vm);
    this.renderTriggered(state);
    this.renderMock(vm);
    if (state.workflow) {
      renderGraph(
        $("graph") as unknown as SVGSVGElement,
        state.workflow,
        vm,
        (t, p, s, alt) => this.onPortClick(t, p, s, alt),
      );
    }
    this.renderReplay(vm);
  }

  private renderCatalog(vm: ViewModel): void {
    const dialog = $("aci-dialog");
    const list = $("aci-list");
    list.textContent = "";
    for (const entry of this.catalog) {
      const row = document.createElement("li");
      const button = document.createElement("button");
      button.textContent = `${entry.aciId} ${entry.running ? "(running)" : "(not running)"}`;
      button.disabled = !entry.running;
      button.addEventListener("click", () => this.send({ cmd: "selectAci", aciId: entry.aciId }));
      row.appendChild(button);
      list.appendChild(row);
    }
    dialog.hidden = !(vm.aciDialogOpen || (vm.state.phase === "discovering" && this.catalog.length > 0));
  }

  private renderTriggered(state: ClientState): void {
    const panel = $("triggered");
    if (!state.triggered) {
      panel.hidden = true;
      return;
    }
    panel.hidden = false;
    const e = state.triggered;
    $("triggered-text").textContent =
      `${e.taskId}.${e.portId} (${e.side}) = ${formatValue(e.value)} · context ${e.contextId}`;
  }

  private renderMock(vm: ViewModel): void {
    $("mock-panel").hidden = !vm.mockControls;
    if (!vm.mockControls || !vm.state.workflow) return;
    const select = $("mock-task") as HTMLSelectElement;
    const options = vm.state.workflow.tasks
      .filter((t) => t.kind === "event-source")
      .flatMap((t) => t.outputs.map((p) => `${t.taskId}/${p.portId}`));
    if (select.options.length !== options.length) {
      select.textContent = "";
      for (const value of options) {
        const option = document.createElement("option");
        option.value = value;
        option.textContent = value;
        select.appendChild(option);
      }
    }
  }

  private renderReplay(vm: ViewModel): void {
    const panel = $("replay-panel");
    panel.hidden = !vm.replayControls;
    if (!vm.replayControls) return;
    const replay = vm.state.replay;
    const list = $("timeline");
    list.textContent = "";
    if (!replay || replay.entries.length === 0) {
      $("replay-empty").hidden = false;
      return;
    }
    $("replay-empty").hidden = true;
    for (const row of buildTimelineRows(replay.entries, replay.cursor)) {
      const item = document.createElement("li");
      item.className = `timeline-row badge-${row.badge % 6}${row.current ? " current" : ""}`;
      const badge = document.createElement("span");
      badge.className = "ctx-badge";
      badge.textContent = row.contextId;
      item.appendChild(badge);
      item.appendChild(document.createTextNode(" " + row.label));
      item.addEventListener("click", () => this.stepTo(row.index));
      list.appendChild(item);
    }
  }

  private stepTo(index: number): void {
    const cursor = this.state?.replay?.cursor ?? null;
    if (cursor === null) return;
    const direction = index > cursor ? "next" : "previous";
    for (let i = 0; i < Math.abs(index - cursor); i += 1) {
      this.send({ cmd: "replayStep", direction });
    }
  }
}

function apiUrl(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  if (override) return override;
  return `ws://${window.location.hostname || "127.0.0.1"}:7760/frontend`;
}

const modeSelect = $("mode") as HTMLSelectElement;
for (const { value, label } of MODES) {
  const option = document.createElement("option");
  option.value = value;
  option.textContent = label;
  modeSelect.appendChild(option);
}
new DebuggerPage(apiUrl());
