// Types mirroring the debug client's frontend API. The UI holds no protocol
// state of its own: everything here arrives inside stateChanged events.

export type ValueTag = "bool" | "int64" | "float64" | "text";

export interface VariableValue {
  tag: ValueTag;
  value: boolean | number | string;
}

export type PortSide = "input" | "output";

export interface BreakpointJson {
  taskId: string;
  portId: string;
  side: PortSide;
  enabled: boolean;
}

export interface RegistryEntryJson {
  entrySeq: number;
  timestamp: number;
  contextId: string;
  taskId: string;
  portId: string;
  side: PortSide;
  value: VariableValue;
  breakpoint: BreakpointJson;
}

export interface PortJson {
  portId: string;
  valueTag: ValueTag;
}

export interface TaskJson {
  taskId: string;
  kind: "event-source" | "transform" | "sink";
  inputs: PortJson[];
  outputs: PortJson[];
  transformSpec?: { name: string; params?: Record<string, number>; delayMs?: number };
}

export interface LinkJson {
  fromTask: string;
  fromPort: string;
  toTask: string;
  toPort: string;
  converter?: { kind: string; params: number[] };
}

export interface WorkflowJson {
  workflowId: string;
  name: string;
  tasks: TaskJson[];
  links: LinkJson[];
}

export type DebugMode = "mock" | "synchronous" | "snapshot" | "profiler";
export type Phase = "idle" | "discovering" | "linked" | "debugging" | "replaying";

export interface ReplayState {
  length: number;
  cursor: number | null;
  entries: RegistryEntryJson[];
}

export interface ClientState {
  mesId: string;
  phase: Phase;
  workflowId: string | null;
  workflow: WorkflowJson | null;
  mode: DebugMode;
  selectedAci: string | null;
  linkStatus: "unknown" | "up" | "down";
  workflowRunning: boolean;
  workflowAvailable: boolean;
  sessionId: string | null;
  sessionStopped: boolean;
  breakpoints: BreakpointJson[];
  triggered: RegistryEntryJson | null;
  queueLength: number;
  chosenContext: string | null;
  protocolViolation: boolean;
  replay: ReplayState | null;
  view: { ports: Record<string, VariableValue>; activeContext: string | null };
}

export interface CatalogEntryJson {
  aciId: string;
  running: boolean;
  ageS: number;
}

export type FrontendEvent =
  | { type: "stateChanged"; state: ClientState }
  | { type: "catalogChanged"; catalog: CatalogEntryJson[] }
  | { type: "linkChanged"; status: "up" | "down" }
  | { type: "breakpointTriggered"; entry: RegistryEntryJson }
  | { type: "replayPosition"; cursor: number | null; length: number; entry: RegistryEntryJson | null }
  | { type: "commandRejected"; cmd: string; reason: string }
  | { type: "startTimeout" }
  | { type: "stopTimeout" };

export type FrontendCommand =
  | { cmd: "selectWorkflow"; workflowId: string }
  | { cmd: "selectAci"; aciId: string }
  | { cmd: "setMode"; mode: DebugMode }
  | { cmd: "start" }
  | { cmd: "stop" }
  | { cmd: "resume" }
  | { cmd: "editBreakpoint"; action: "add" | "remove" | "toggle"; breakpoint: BreakpointJson }
  | { cmd: "replayStep"; direction: "next" | "previous" }
  | { cmd: "discardReplay" }
  | { cmd: "mockInject"; taskId: string; portId: string; value: VariableValue };

export function formatValue(v: VariableValue): string {
  if (v.tag === "bool") return v.value ? "true" : "false";
  if (v.tag === "float64" && typeof v.value === "number") {
    return Number.isInteger(v.value) ? v.value.toFixed(1) : String(v.value);
  }
  return String(v.value);
}

export function portKey(taskId: string, portId: string, side: PortSide): string {
  return `${taskId}.${portId}/${side}`;
}
