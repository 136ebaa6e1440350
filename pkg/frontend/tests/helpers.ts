import { readFileSync } from "node:fs";
import { resolve } from "node:path";
import type { AgentEvent, SessionReport } from "../src/api.js";

export interface SessionFixture {
  format_version: number;
  requirements: string;
  statuses: Record<string, string>;
  events: AgentEvent[];
  report: SessionReport & Record<string, any>;
}

// vitest runs with the package root as cwd; import.meta.url is not a file
// URL under the jsdom environment, so resolve from cwd instead
const FIXTURE_PATH = resolve(process.cwd(), "tests/fixtures/session.json");

export function loadFixture(): SessionFixture {
  return JSON.parse(readFileSync(FIXTURE_PATH, "utf8"));
}

export async function waitFor(predicate: () => boolean, timeoutMs = 10_000, label = "condition"): Promise<void> {
  const start = Date.now();
  while (!predicate()) {
    if (Date.now() - start > timeoutMs) throw new Error(`timed out waiting for ${label}`);
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}
