import { describe, expect, it } from "vitest";
import { EVENT_KINDS, type AgentEvent } from "../src/api.js";
import {
  describeEvent,
  renderFeedbackControls,
  renderIterationTabs,
  renderKpiDashboard,
  renderScriptPanel,
  renderStatus,
  renderTimeline,
  type FeedbackElements,
} from "../src/render.js";
import { applyEvent, initialView, type SessionView } from "../src/state.js";
import { loadFixture } from "./helpers.js";

function replayAll(): SessionView {
  let view = initialView("ui-fixture");
  for (const ev of loadFixture().events) view = applyEvent(view, ev);
  return view;
}

function div(): HTMLElement {
  return document.createElement("div");
}

describe("describeEvent", () => {
  it("gives every event kind its own wording", () => {
    const byKind = new Map<string, AgentEvent>();
    for (const ev of loadFixture().events) {
      if (!byKind.has(ev.kind)) byKind.set(ev.kind, ev);
    }
    expect(byKind.size).toBe(EVENT_KINDS.length);
    const summaries = [...byKind.values()].map((ev) => describeEvent(ev));
    expect(new Set(summaries).size).toBe(summaries.length);
    expect(describeEvent(byKind.get("iteration_done")!)).toContain("8/8 cases");
    expect(describeEvent(byKind.get("human_feedback_applied")!)).toContain("operator feedback");
  });
});

describe("renderTimeline", () => {
  it("renders one item per event, in sequence order, with kind-specific classes", () => {
    const view = replayAll();
    const list = document.createElement("ol");
    renderTimeline(list, view);
    const items = [...list.querySelectorAll("li")];
    expect(items).toHaveLength(view.timeline.length);
    expect(items.map((li) => Number(li.dataset.sequence))).toEqual(view.timeline.map((ev) => ev.sequence));
    const kinds = new Set(items.map((li) => li.dataset.kind));
    for (const kind of EVENT_KINDS) {
      expect(kinds.has(kind)).toBe(true);
      expect(list.querySelector(`.ev-${kind}`)).not.toBeNull();
    }
  });
});

describe("renderStatus", () => {
  it("shows the live status on the chip and the phase beside it", () => {
    const chip = div();
    const phase = div();
    let view = initialView("s");
    view = applyEvent(view, {
      session_id: "s",
      sequence: 1,
      kind: "phase_started",
      timestamp: 0,
      payload: { phase: "generate" },
    });
    renderStatus(chip, phase, view);
    expect(chip.textContent).toBe("generating");
    expect(chip.className).toContain("status-generating");
    expect(phase.textContent).toContain("generate");
  });
});

describe("renderKpiDashboard", () => {
  it("renders aggregate cards and a per-flow row", () => {
    const fixture = loadFixture();
    const kpis = fixture.report.iterations[1].report!.kpis!;
    const host = div();
    renderKpiDashboard(host, kpis);
    const values = [...host.querySelectorAll(".kpi-value")].map((n) => n.textContent);
    expect(values).toEqual(["10.0 Mbit/s", "20.0 ms", "0.2%", "10.0 ms"]);
    expect(host.querySelectorAll(".flow-row")).toHaveLength(1);
    expect(host.querySelector(".flow-row")!.textContent).toContain("10.0 Mbit/s");
  });

  it("falls back to the no-traffic placeholder", () => {
    const host = div();
    renderKpiDashboard(host, null);
    expect(host.textContent).toBe("no traffic observed");
    renderKpiDashboard(host, { aggregate: {} as any, flows: [], flow_count: 0 });
    expect(host.textContent).toBe("no traffic observed");
  });
});

describe("renderScriptPanel", () => {
  it("diffs against the previous iteration", () => {
    const fixture = loadFixture();
    const [first, second] = fixture.report.iterations;
    const host = div();
    renderScriptPanel(host, second, first);
    expect(host.querySelectorAll(".diff-del")).toHaveLength(1);
    expect(host.querySelectorAll(".diff-add")).toHaveLength(2);
    expect(host.querySelector(".diff-add")!.textContent).toContain("UintegerValue(1024)");
  });

  it("shows plain source for the first iteration", () => {
    const fixture = loadFixture();
    const host = div();
    renderScriptPanel(host, fixture.report.iterations[0], null);
    expect(host.querySelector(".diff-add")).toBeNull();
    expect(host.textContent).toContain("FlowMonitorHelper flowHelper;");
  });
});

describe("renderIterationTabs", () => {
  it("creates one tab per finished iteration and marks feedback provenance", () => {
    const fixture = loadFixture();
    const view = replayAll();
    const nav = div();
    const body = div();
    let selected = -1;
    renderIterationTabs(nav, body, view, fixture.report, 2, { onSelect: (i) => (selected = i) });
    const tabs = [...nav.querySelectorAll(".tab")];
    expect(tabs).toHaveLength(2);
    expect(tabs[1].className).toContain("tab-active");
    expect(body.textContent).toContain("feedback source: human");
    expect(body.querySelector(".panel-kpis")!.textContent).toContain("10.0 Mbit/s");
    (tabs[0] as HTMLButtonElement).click();
    expect(selected).toBe(1);
  });

  it("notes when the report for a tab has not arrived yet", () => {
    const view = replayAll();
    const nav = div();
    const body = div();
    renderIterationTabs(nav, body, view, null, 2, { onSelect: () => {} });
    expect(body.textContent).toContain("waiting for iteration 2 report");
  });
});

describe("renderFeedbackControls", () => {
  function controls(): FeedbackElements {
    const form = div();
    const text = document.createElement("textarea");
    const send = document.createElement("button");
    const approve = document.createElement("button");
    form.append(text, send, approve);
    return { form, text, send, approve };
  }

  it("opens text feedback while paused and enables approval", () => {
    const els = controls();
    const view = { ...initialView("s"), awaitingHuman: true };
    renderFeedbackControls(els, view);
    expect(els.text.disabled).toBe(false);
    expect(els.send.disabled).toBe(false);
    expect(els.approve.disabled).toBe(false);
  });

  it("disables everything after convergence and explains why", () => {
    const els = controls();
    const view = replayAll();
    renderFeedbackControls(els, view);
    expect(els.text.disabled).toBe(true);
    expect(els.send.disabled).toBe(true);
    expect(els.approve.disabled).toBe(true);
    expect(els.form.title).toContain("converged");
    expect(els.form.classList.contains("feedback-closed")).toBe(true);
  });
});
