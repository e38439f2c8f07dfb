// Line-oriented TCP client for the sensor service with automatic reconnect.
// The socket never gates rendering: messages mutate the store and the
// renderer ticks on its own clock.

import net from "node:net";

import { encodeCommand, parseMessage, type ServerMessage } from "./protocol.js";

export interface ClientOptions {
  host: string;
  port: number;
  reconnectDelayMs?: number;
}

export class ServiceClient {
  private socket: net.Socket | null = null;
  private buffer = "";
  private closed = false;
  private readonly delayMs: number;

  onMessage: (msg: ServerMessage) => void = () => {};
  onStatus: (status: "connecting" | "connected" | "lost") => void = () => {};

  constructor(private readonly options: ClientOptions) {
    this.delayMs = options.reconnectDelayMs ?? 1000;
  }

  connect(): void {
    if (this.closed) return;
    this.onStatus("connecting");
    const socket = net.createConnection(this.options.port, this.options.host);
    this.socket = socket;
    socket.setNoDelay(true);
    socket.on("connect", () => this.onStatus("connected"));
    socket.on("data", (chunk) => this.feed(chunk.toString("utf8")));
    socket.on("error", () => {});
    socket.on("close", () => {
      this.socket = null;
      if (!this.closed) {
        this.onStatus("lost");
        setTimeout(() => this.connect(), this.delayMs);
      }
    });
  }

  private feed(text: string): void {
    this.buffer += text;
    let index: number;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index);
      this.buffer = this.buffer.slice(index + 1);
      if (!line.trim()) continue;
      const msg = parseMessage(line);
      if (msg) this.onMessage(msg);
    }
  }

  send(id: number, command: string, args?: Record<string, unknown>): boolean {
    if (!this.socket || this.socket.destroyed) return false;
    this.socket.write(encodeCommand({ kind: "command", id, command, args }));
    return true;
  }

  close(): void {
    this.closed = true;
    this.socket?.destroy();
    this.socket = null;
  }
}
