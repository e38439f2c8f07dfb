// Pure terminal rendering: state snapshot in, ANSI string out.
// Cells map force over the 0..6 N working range onto a monotone color ramp;
// the surface view is the 3x3 grid bilinearly upsampled so a touch reads as
// a smooth hotspot rather than nine flat tiles.

import type { DashboardStore } from "./store.js";

const CSI = "\x1b[";
const RESET = `${CSI}0m`;

// dark blue -> cyan -> yellow -> red, monotone in force
const RAMP_256 = [17, 18, 19, 20, 26, 32, 38, 44, 50, 49, 84, 118, 154, 184, 214, 208, 202, 196];

export const FORCE_FULL_SCALE_N = 6.0;

export function colorIndex(force: number): number {
  const clamped = Math.max(0, Math.min(force / FORCE_FULL_SCALE_N, 1));
  return RAMP_256[Math.min(RAMP_256.length - 1, Math.floor(clamped * (RAMP_256.length - 1)))];
}

/**
 * Bilinear upsample of the 3x3 grid (row-major, positions 1..9) onto an
 * arbitrary raster. Corners of the raster coincide with the corner cells.
 */
export function bilinearField(grid: number[], rows: number, cols: number): number[][] {
  const at = (r: number, c: number) => grid[r * 3 + c];
  const out: number[][] = [];
  for (let i = 0; i < rows; i++) {
    const y = (i / (rows - 1)) * 2; // 0..2 in cell coordinates
    const r0 = Math.min(Math.floor(y), 1);
    const fy = y - r0;
    const row: number[] = [];
    for (let j = 0; j < cols; j++) {
      const x = (j / (cols - 1)) * 2;
      const c0 = Math.min(Math.floor(x), 1);
      const fx = x - c0;
      row.push(
        at(r0, c0) * (1 - fx) * (1 - fy) +
          at(r0, c0 + 1) * fx * (1 - fy) +
          at(r0 + 1, c0) * (1 - fx) * fy +
          at(r0 + 1, c0 + 1) * fx * fy,
      );
    }
    out.push(row);
  }
  return out;
}

/** Peak-to-mean contrast of the smoothed field; a flat press sits near 1. */
export function fieldContrast(grid: number[]): number {
  const mean = grid.reduce((a, b) => a + b, 0) / grid.length;
  if (mean <= 0) return 1;
  return Math.max(...grid) / mean;
}

const ARROWS = ["→", "↗", "↑", "↖", "←", "↙", "↓", "↘"];

export function shearArrow(vector: [number, number]): { glyph: string; magnitude: number } {
  const [x, y] = vector;
  const magnitude = Math.hypot(x, y);
  if (magnitude < 0.15) return { glyph: "·", magnitude };
  const angle = Math.atan2(y, x); // -pi..pi
  const sector = Math.round(angle / (Math.PI / 4));
  return { glyph: ARROWS[(sector + 8) % 8], magnitude };
}

function paint(text: string, color256: number, background = false): string {
  return `${CSI}${background ? 48 : 38};5;${color256}m${text}${RESET}`;
}

function gray(text: string): string {
  return `${CSI}90m${text}${RESET}`;
}

export function renderSurface(grid: number[], stale: boolean, rows = 9, cols = 21): string[] {
  const field = bilinearField(grid, rows, cols);
  const lines: string[] = [];
  for (let i = 0; i < rows; i++) {
    let line = "";
    for (let j = 0; j < cols; j++) {
      line += stale ? gray("▒▒") : paint("  ", colorIndex(field[i][j]), true);
    }
    lines.push(line);
  }
  return lines;
}

export function renderGridNumbers(grid: number[], stale: boolean): string[] {
  const lines: string[] = [];
  for (let r = 0; r < 3; r++) {
    const cells = [];
    for (let c = 0; c < 3; c++) {
      const label = r * 3 + c + 1;
      const value = grid[r * 3 + c];
      const text = `${label}:${value >= 0 ? " " : ""}${value.toFixed(2).padStart(5)}N`;
      cells.push(stale ? gray(text) : paint(text, colorIndex(value)));
    }
    lines.push(cells.join("  "));
  }
  return lines;
}

export function sparkline(values: number[], width = 30): string {
  if (values.length === 0) return " ".repeat(width);
  const glyphs = "▁▂▃▄▅▆▇█";
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = values.length / width;
  let out = "";
  for (let i = 0; i < width; i++) {
    const v = values[Math.min(values.length - 1, Math.floor(i * step))];
    out += glyphs[Math.min(7, Math.floor(((v - lo) / span) * 8))];
  }
  return out;
}

export function renderFrame(store: DashboardStore, nowMs: number): string {
  const lines: string[] = [];
  const stale = store.isStale(nowMs);
  const status =
    store.connection === "connected"
      ? stale
        ? `${CSI}33mSTALE (no state for >1 s)${RESET}`
        : `${CSI}32mLIVE${RESET}`
      : `${CSI}31m${store.connection.toUpperCase()}${RESET}`;

  lines.push(`tactile dashboard   ${status}   seq ${store.latestSeq}`);
  if (store.interferenceBanner) {
    lines.push(`${CSI}41;97m INTERFERENCE: field disturbance detected -- force data suspect ${RESET}`);
  }

  const grid = store.latest?.normal_grid ?? Array(9).fill(0);
  const surface = renderSurface(grid, stale);
  const numbers = renderGridNumbers(grid, stale);
  const arrow = shearArrow(store.latest?.shear_vector ?? [0, 0]);
  const temp = store.latest?.temperature;

  const side: string[] = [];
  side.push(numbers[0]);
  side.push(numbers[1]);
  side.push(numbers[2]);
  side.push("");
  side.push(
    `shear ${arrow.glyph}  ${arrow.magnitude.toFixed(2)} N  ` +
      `[${"#".repeat(Math.min(20, Math.round(arrow.magnitude * 2)))}]`,
  );
  side.push(temp === undefined ? gray("temperature --") : `temperature ${temp.toFixed(2)} degC`);
  side.push(`history ${sparkline(store.history.map((p) => p.temperature))}`);
  side.push(`force   ${sparkline(store.history.map((p) => p.totalForce))}`);
  side.push("");
  side.push(`thermostat band: heat ${store.heatC.toFixed(1)} / stop ${store.stopC.toFixed(1)} degC`);
  side.push(store.recordingPath ? `${CSI}31m● recording ${store.recordingPath}${RESET}` : gray("○ not recording"));
  side.push(store.profileId ? `profile ${store.profileId}` : gray("profile: service default"));

  for (let i = 0; i < Math.max(surface.length, side.length); i++) {
    lines.push(`${surface[i] ?? " ".repeat(42)}   ${side[i] ?? ""}`);
  }

  if (store.materials.length > 0) {
    const last = store.materials[store.materials.length - 1];
    lines.push(`material: ${last.label} (drop ${last.maxDropC.toFixed(2)} degC)`);
  }
  if (store.notice) lines.push(store.notice);
  lines.push(
    gray("[n] zero normal  [s] zero shear  [r] record  [i] interference  [t/T] stop-  [h/H] heat-band  [q] quit"),
  );
  return lines.join("\n");
}
