// Derived control flags. Pure function of the last stateChanged payload plus
// the socket status, so reloading the page reproduces the identical view.

import type { BreakpointJson, ClientState, PortSide } from "./types.js";

export interface ViewModel {
  state: ClientState;
  connected: boolean;
  startEnabled: boolean;
  stopEnabled: boolean;
  resumeEnabled: boolean;
  breakpointsEditable: boolean;
  modeSelectable: boolean;
  aciDialogOpen: boolean;
  replayControls: boolean;
  replayCursor: number | null;
  mockControls: boolean;
}

export function buildViewModel(
  state: ClientState,
  connected: boolean,
  runningCandidates: number,
): ViewModel {
  const snapshotLike =
    state.phase === "debugging" && (state.mode === "snapshot" || state.mode === "profiler");
  const startEnabled =
    connected &&
    (state.mode === "mock"
      ? state.workflowId !== null && state.phase !== "debugging" && state.phase !== "replaying"
      : state.phase === "linked" && state.linkStatus === "up" && state.workflowAvailable);
  return {
    state,
    connected,
    startEnabled,
    stopEnabled: connected && state.phase === "debugging",
    resumeEnabled: connected && (state.triggered !== null || state.queueLength > 0),
    breakpointsEditable:
      connected && !snapshotLike && !state.sessionStopped && state.phase !== "replaying",
    modeSelectable: connected && state.phase !== "debugging",
    aciDialogOpen:
      connected && state.phase === "discovering" && runningCandidates > 1,
    replayControls: connected && state.phase === "replaying",
    replayCursor: state.replay ? state.replay.cursor : null,
    mockControls: connected && state.mode === "mock" && state.phase === "debugging",
  };
}

export type PortVisual = "plain" | "set" | "disabled" | "triggered";

export function portVisual(
  state: ClientState,
  taskId: string,
  portId: string,
  side: PortSide,
): PortVisual {
  const triggered = state.triggered;
  if (
    triggered &&
    triggered.taskId === taskId &&
    triggered.portId === portId &&
    triggered.side === side
  ) {
    return "triggered";
  }
  const bp = state.breakpoints.find(
    (b: BreakpointJson) => b.taskId === taskId && b.portId === portId && b.side === side,
  );
  if (!bp) return "plain";
  return bp.enabled ? "set" : "disabled";
}
