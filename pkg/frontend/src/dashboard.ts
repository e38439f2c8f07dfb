// Wires socket -> store -> renderer and maps keys onto service commands.
// Rendering runs at a fixed 30 fps off the last-known state, so a stalled
// socket grays the view instead of freezing it.

import { ServiceClient } from "./client.js";
import { renderFrame } from "./render.js";
import { DashboardStore } from "./store.js";

const RENDER_HZ = 32; // display ticks; stays >= 30 through timer jitter
const DATA_RATE_HZ = 30; // requested state decimation; full rate stays server-side

export interface DashboardOptions {
  host: string;
  port: number;
  out?: NodeJS.WriteStream;
  input?: NodeJS.ReadStream;
}

export class Dashboard {
  readonly store = new DashboardStore();
  readonly client: ServiceClient;
  private timer: NodeJS.Timeout | null = null;
  private readonly out: NodeJS.WriteStream;
  private readonly input?: NodeJS.ReadStream;

  constructor(options: DashboardOptions) {
    this.out = options.out ?? process.stdout;
    this.input = options.input;
    this.client = new ServiceClient({ host: options.host, port: options.port });
    this.client.onMessage = (msg) => this.store.apply(msg, Date.now());
    this.client.onStatus = (status) => {
      this.store.connection = status;
      if (status === "connected") {
        this.command("set_rate", { hz: DATA_RATE_HZ });
      }
    };
  }

  start(): void {
    this.client.connect();
    this.timer = setInterval(() => this.draw(), 1000 / RENDER_HZ);
    if (this.input) this.attachKeys(this.input);
  }

  stop(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
    this.client.close();
  }

  private command(command: string, args?: Record<string, unknown>): void {
    const id = this.store.issue(command);
    if (!this.client.send(id, command, args)) {
      this.store.notice = `${command}: not connected`;
    }
  }

  handleKey(key: string): void {
    switch (key) {
      case "n":
        this.command("zero_cal", { group: "normal" });
        break;
      case "s":
        this.command("zero_cal", { group: "shear" });
        break;
      case "r":
        if (this.store.recordingPath) {
          this.command("record", { action: "stop" });
        } else {
          this.command("record", { action: "start" });
        }
        break;
      case "i":
        this.command("inject_interference", { enabled: !this.store.interferenceBanner });
        break;
      case "t":
      case "T":
      case "h":
      case "H": {
        const stopDelta = key === "t" ? -0.5 : key === "T" ? 0.5 : 0;
        const heatDelta = key === "h" ? -0.5 : key === "H" ? 0.5 : 0;
        if (this.store.adjustBand(stopDelta, heatDelta) === null) {
          this.command("set_thermostat", { stop_c: this.store.stopC, heat_c: this.store.heatC });
        }
        break;
      }
      case "q":
      case "": // ctrl-c
        this.stop();
        process.exit(0);
    }
  }

  private attachKeys(input: NodeJS.ReadStream): void {
    input.setRawMode?.(true);
    input.resume();
    input.setEncoding("utf8");
    input.on("data", (key: string) => this.handleKey(key));
  }

  private draw(): void {
    const frame = renderFrame(this.store, Date.now());
    this.out.write(`\x1b[2J\x1b[H${frame}\n`);
  }
}
