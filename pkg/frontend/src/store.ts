// Dashboard state: last-known sensor output plus a short rolling history.
// The renderer reads snapshots from here; the socket layer writes into it.
// No calibration math happens on this side -- every number displayed is a
// number the service sent.

import type { ForceStatePayload, ServerMessage } from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "lost";

export interface HistoryPoint {
  t_s: number;
  temperature: number;
  totalForce: number;
}

export interface MaterialEvent {
  t_s: number;
  label: string;
  maxDropC: number;
}

const HISTORY_SPAN_S = 30;
const STALE_AFTER_MS = 1000;

export class DashboardStore {
  connection: ConnectionStatus = "connecting";
  latest: ForceStatePayload | null = null;
  latestSeq = 0;
  lastStateWallMs = 0;
  statesReceived = 0;
  history: HistoryPoint[] = [];
  materials: MaterialEvent[] = [];
  interferenceBanner = false;
  recordingPath: string | null = null;
  profileId: string | null = null;
  stopC = 36;
  heatC = 32;
  notice = "";

  private pendingAcks = new Map<number, string>();
  private nextId = 1;

  /** Register an outgoing command; returns its request id. */
  issue(command: string): number {
    const id = this.nextId++;
    this.pendingAcks.set(id, command);
    return id;
  }

  apply(msg: ServerMessage, nowMs: number): void {
    switch (msg.kind) {
      case "force_state": {
        this.latest = msg.payload;
        this.latestSeq = msg.seq;
        this.lastStateWallMs = nowMs;
        this.statesReceived += 1;
        this.interferenceBanner = msg.payload.interference;
        this.pushHistory({
          t_s: msg.payload.timestamp_us / 1e6,
          temperature: msg.payload.temperature,
          totalForce: msg.payload.normal_grid.reduce((a, b) => a + b, 0),
        });
        break;
      }
      case "event": {
        if (msg.payload.event === "material") {
          this.materials.push({
            t_s: msg.timestamp_us / 1e6,
            label: String(msg.payload.label),
            maxDropC: Number(msg.payload.max_drop_c ?? NaN),
          });
          if (this.materials.length > 5) this.materials.shift();
        } else if (msg.payload.event === "interference") {
          this.interferenceBanner = Boolean(msg.payload.flag);
        }
        break;
      }
      case "ack": {
        const command = this.takePending(msg.request_id);
        if (command === "record" && typeof msg.payload.recording === "string") {
          this.recordingPath = msg.payload.recording;
        }
        if (command === "record" && typeof msg.payload.path === "string") {
          this.recordingPath = null; // stop ack carries the closed file
        }
        if (command === "load_profile" && typeof msg.payload.loaded === "string") {
          this.profileId = msg.payload.loaded;
        }
        this.notice = command ? `${command}: ok` : "ok";
        break;
      }
      case "error": {
        const command = this.takePending(msg.request_id);
        // surface the service's reason verbatim
        this.notice = `${command ?? "command"} failed: ${msg.payload.reason}`;
        break;
      }
    }
  }

  private takePending(id: number | null): string | undefined {
    if (id === null) return undefined;
    const command = this.pendingAcks.get(id);
    this.pendingAcks.delete(id);
    return command;
  }

  private pushHistory(point: HistoryPoint): void {
    this.history.push(point);
    const cutoff = point.t_s - HISTORY_SPAN_S;
    while (this.history.length > 0 && this.history[0].t_s < cutoff) {
      this.history.shift();
    }
  }

  isStale(nowMs: number): boolean {
    return this.latest === null || nowMs - this.lastStateWallMs > STALE_AFTER_MS;
  }

  /** Client-side thermostat band edit; refuses an inverted band. */
  adjustBand(stopDelta: number, heatDelta: number): string | null {
    const stop = this.stopC + stopDelta;
    const heat = this.heatC + heatDelta;
    if (heat >= stop) {
      this.notice = `rejected: heat ${heat.toFixed(1)} must stay below stop ${stop.toFixed(1)}`;
      return this.notice;
    }
    this.stopC = stop;
    this.heatC = heat;
    return null;
  }
}
