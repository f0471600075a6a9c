// Replay timeline rows: chronological entries with per-context badges.

import type { RegistryEntryJson } from "./types.js";
import { formatValue } from "./types.js";

export interface TimelineRow {
  index: number;
  label: string;
  contextId: string;
  badge: number; // stable per-context color slot
  current: boolean;
}

export function buildTimelineRows(
  entries: RegistryEntryJson[],
  cursor: number | null,
): TimelineRow[] {
  const badges = new Map<string, number>();
  return entries.map((entry, index) => {
    let badge = badges.get(entry.contextId);
    if (badge === undefined) {
      badge = badges.size;
      badges.set(entry.contextId, badge);
    }
    return {
      index,
      label: `${entry.taskId}.${entry.portId} ${entry.side} = ${formatValue(entry.value)}`,
      contextId: entry.contextId,
      badge,
      current: cursor === index,
    };
  });
}

export function contextCount(entries: RegistryEntryJson[]): number {
  return new Set(entries.map((e) => e.contextId)).size;
}
