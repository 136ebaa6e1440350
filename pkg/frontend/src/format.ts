// Display formatting only. Every number shown comes straight from the report
// document; the UI does unit conversion, never KPI math.

import type { KpiBundle } from "./api.js";

export function formatThroughput(bps: number): string {
  return `${(bps / 1e6).toFixed(1)} Mbit/s`;
}

export function formatMillis(seconds: number): string {
  return `${(seconds * 1e3).toFixed(1)} ms`;
}

export function formatPercent(ratio: number): string {
  return `${(ratio * 100).toFixed(1)}%`;
}

// Timeline durations: sub-second values read better in ms.
export function formatDuration(seconds: number): string {
  if (seconds < 1) return `${(seconds * 1e3).toFixed(0)} ms`;
  return `${seconds.toFixed(2)} s`;
}

export interface KpiCardData {
  label: string;
  value: string;
}

export const NO_TRAFFIC = "no traffic observed";

// Aggregate cards for the four headline KPIs, or null when the run produced
// no flows (callers render the NO_TRAFFIC placeholder).
export function kpiCards(kpis: KpiBundle | null | undefined): KpiCardData[] | null {
  if (!kpis || !kpis.flows || kpis.flows.length === 0) return null;
  const a = kpis.aggregate;
  return [
    { label: "throughput", value: formatThroughput(a.throughput_bps) },
    { label: "mean delay", value: formatMillis(a.mean_delay_s) },
    { label: "packet loss", value: formatPercent(a.loss_ratio) },
    { label: "mean jitter", value: formatMillis(a.mean_jitter_s) },
  ];
}
