import { describe, expect, it } from "vitest";
import { EVENT_KINDS } from "../src/api.js";
import {
  applyEvent,
  approveEnabled,
  feedbackDisabledReason,
  feedbackEnabled,
  initialView,
  type SessionView,
} from "../src/state.js";
import { loadFixture } from "./helpers.js";

function replayAll(): SessionView {
  const fixture = loadFixture();
  let view = initialView("ui-fixture");
  for (const ev of fixture.events) view = applyEvent(view, ev);
  return view;
}

describe("session view reducer", () => {
  it("appends every event in server sequence order", () => {
    const fixture = loadFixture();
    const view = replayAll();
    expect(view.timeline).toHaveLength(fixture.events.length);
    expect(view.timeline.map((ev) => ev.sequence)).toEqual(fixture.events.map((ev) => ev.sequence));
    const sequences = view.timeline.map((ev) => ev.sequence);
    for (let i = 1; i < sequences.length; i++) {
      expect(sequences[i]).toBeGreaterThan(sequences[i - 1]);
    }
  });

  it("covers all event kinds in the recorded session", () => {
    const kinds = new Set(replayAll().timeline.map((ev) => ev.kind));
    for (const kind of EVENT_KINDS) expect(kinds.has(kind)).toBe(true);
  });

  it("drops replayed frames without mutating the view", () => {
    const fixture = loadFixture();
    let view = initialView("ui-fixture");
    for (const ev of fixture.events.slice(0, 10)) view = applyEvent(view, ev);
    const replayed = applyEvent(view, fixture.events[4]);
    expect(replayed).toBe(view);
    expect(replayed.timeline).toHaveLength(10);
  });

  it("tracks one iteration tab per finished iteration", () => {
    const view = replayAll();
    expect(view.iterations).toEqual([1, 2]);
  });

  it("pauses on iteration_done and resumes on feedback", () => {
    const fixture = loadFixture();
    let view = initialView("ui-fixture");
    for (const ev of fixture.events) {
      const before = view.awaitingHuman;
      view = applyEvent(view, ev);
      if (ev.kind === "iteration_done" && ev.payload.awaiting_human) {
        expect(view.awaitingHuman).toBe(true);
        expect(view.status).toBe("awaiting_human");
      }
      if (ev.kind === "human_feedback_applied") {
        expect(before).toBe(true);
        expect(view.awaitingHuman).toBe(false);
      }
    }
  });

  it("maps live phases onto pipeline statuses", () => {
    let view = initialView("s");
    view = applyEvent(view, {
      session_id: "s",
      sequence: 1,
      kind: "phase_started",
      timestamp: 0,
      payload: { phase: "extract" },
    });
    expect(view.status).toBe("extracting");
    expect(view.phase).toBe("extract");
  });

  it("finishes on session_done with the terminal status and verdict", () => {
    const view = replayAll();
    expect(view.finished).toBe(true);
    expect(view.status).toBe("converged");
    expect(view.verdict).toBe("meets_criteria");
    expect(view.awaitingHuman).toBe(false);
  });
});

describe("feedback gating", () => {
  it("keeps text feedback open while live and approval paused-only", () => {
    let view = initialView("s");
    expect(feedbackEnabled(view)).toBe(true);
    expect(approveEnabled(view)).toBe(false);
    view = { ...view, awaitingHuman: true };
    expect(approveEnabled(view)).toBe(true);
  });

  it("closes all controls once the session finishes, with a reason", () => {
    const view = replayAll();
    expect(feedbackEnabled(view)).toBe(false);
    expect(approveEnabled(view)).toBe(false);
    expect(feedbackDisabledReason(view)).toContain("converged");
  });
});
