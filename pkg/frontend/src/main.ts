#!/usr/bin/env node
// Entry point: `skinstack-dashboard [host] [port]`.

import { Dashboard } from "./dashboard.js";

const host = process.argv[2] ?? "127.0.0.1";
const port = Number(process.argv[3] ?? process.env.SKINSTACK_PORT ?? 7355);

if (!Number.isFinite(port) || port <= 0) {
  console.error(`bad port: ${process.argv[3]}`);
  process.exit(2);
}

const dashboard = new Dashboard({ host, port, input: process.stdin });
dashboard.start();
