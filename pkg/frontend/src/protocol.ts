// Message types of the sensor service's newline-delimited JSON stream.

export interface ForceStatePayload {
  timestamp_us: number;
  normal_grid: number[]; // 9 cells, grid positions 1..9 row-major
  shear: { "x+": number; "x-": number; "y+": number; "y-": number };
  shear_vector: [number, number];
  temperature: number;
  interference: boolean;
  saturated: boolean;
}

export interface ForceStateMessage {
  kind: "force_state";
  seq: number;
  timestamp_us: number;
  payload: ForceStatePayload;
}

export interface EventMessage {
  kind: "event";
  seq: number;
  timestamp_us: number;
  payload: { event: string; [key: string]: unknown };
}

export interface AckMessage {
  kind: "ack";
  request_id: number | null;
  payload: Record<string, unknown>;
}

export interface ErrorMessage {
  kind: "error";
  request_id: number | null;
  payload: { reason: string };
}

export type ServerMessage = ForceStateMessage | EventMessage | AckMessage | ErrorMessage;

export interface Command {
  kind: "command";
  id: number;
  command: string;
  args?: Record<string, unknown>;
}

export function parseMessage(line: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const kind = (doc as { kind?: unknown }).kind;
  if (kind === "force_state" || kind === "event" || kind === "ack" || kind === "error") {
    return doc as ServerMessage;
  }
  return null;
}

export function encodeCommand(cmd: Command): string {
  return JSON.stringify(cmd) + "\n";
}
