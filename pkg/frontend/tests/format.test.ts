import { describe, expect, it } from "vitest";
import type { KpiBundle } from "../src/api.js";
import { NO_TRAFFIC, formatDuration, formatMillis, formatPercent, formatThroughput, kpiCards } from "../src/format.js";

function bundle(aggregate: Partial<KpiBundle["aggregate"]>, flows = 1): KpiBundle {
  const agg = {
    throughput_bps: 0,
    mean_delay_s: 0,
    mean_jitter_s: 0,
    loss_ratio: 0,
    tx_packets: 0,
    rx_packets: 0,
    ...aggregate,
  };
  return {
    aggregate: agg,
    flow_count: flows,
    flows: Array.from({ length: flows }, (_, i) => ({
      flow_id: i + 1,
      delivery_ratio: 1,
      rx_bytes: 0,
      ...agg,
    })),
  };
}

describe("unit formatting", () => {
  it("formats throughput in Mbit/s", () => {
    expect(formatThroughput(1_000_000)).toBe("1.0 Mbit/s");
    expect(formatThroughput(10_000_000)).toBe("10.0 Mbit/s");
    expect(formatThroughput(2_500_000)).toBe("2.5 Mbit/s");
  });

  it("formats delay and jitter in ms", () => {
    expect(formatMillis(0.02)).toBe("20.0 ms");
    expect(formatMillis(0.01)).toBe("10.0 ms");
    expect(formatMillis(0.0305)).toBe("30.5 ms");
  });

  it("formats loss as a percentage", () => {
    expect(formatPercent(0.05)).toBe("5.0%");
    expect(formatPercent(0.002)).toBe("0.2%");
  });

  it("renders zero loss as 0.0%, not blank", () => {
    expect(formatPercent(0)).toBe("0.0%");
  });

  it("switches duration units at one second", () => {
    expect(formatDuration(0.0664)).toBe("66 ms");
    expect(formatDuration(2.5)).toBe("2.50 s");
  });
});

describe("kpi cards", () => {
  it("shows the four headline KPIs with units for a skewed single-flow run", () => {
    const cards = kpiCards(
      bundle({ throughput_bps: 1_000_000, mean_delay_s: 0.02, loss_ratio: 0.05, mean_jitter_s: 0.01 }),
    );
    expect(cards).not.toBeNull();
    expect(cards!.map((c) => c.value)).toEqual(["1.0 Mbit/s", "20.0 ms", "5.0%", "10.0 ms"]);
    expect(cards!.map((c) => c.label)).toEqual(["throughput", "mean delay", "packet loss", "mean jitter"]);
  });

  it("yields null for an empty flow list so callers render the placeholder", () => {
    expect(kpiCards(bundle({}, 0))).toBeNull();
    expect(kpiCards(null)).toBeNull();
    expect(kpiCards(undefined)).toBeNull();
    expect(NO_TRAFFIC).toBe("no traffic observed");
  });

  it("keeps zero loss visible on the card", () => {
    const cards = kpiCards(bundle({ throughput_bps: 5_000_000, loss_ratio: 0 }));
    expect(cards![2].value).toBe("0.0%");
  });
});
