// Static left-to-right topological layout: tasks land in the column given by
// their longest path from an event source, rows in declaration order.

import type { WorkflowJson } from "./types.js";

export interface NodePlacement {
  taskId: string;
  column: number;
  row: number;
}

export function layoutWorkflow(workflow: WorkflowJson): NodePlacement[] {
  const depth = new Map<string, number>();
  for (const task of workflow.tasks) depth.set(task.taskId, 0);
  // relax longest-path depths; the graph is validated acyclic upstream
  for (let pass = 0; pass < workflow.tasks.length; pass += 1) {
    let changed = false;
    for (const link of workflow.links) {
      const want = (depth.get(link.fromTask) ?? 0) + 1;
      if (want > (depth.get(link.toTask) ?? 0)) {
        depth.set(link.toTask, want);
        changed = true;
      }
    }
    if (!changed) break;
  }
  const rows = new Map<number, number>();
  const placements: NodePlacement[] = [];
  for (const task of workflow.tasks) {
    const column = depth.get(task.taskId) ?? 0;
    const row = rows.get(column) ?? 0;
    rows.set(column, row + 1);
    placements.push({ taskId: task.taskId, column, row });
  }
  return placements;
}
