// Session view state: a pure reducer over the event stream. The timeline is
// append-only in server sequence order; nothing acked is ever reordered or
// dropped, and duplicates from a resumed stream are ignored.

import type { AgentEvent } from "./api.js";

export interface SessionView {
  sessionId: string;
  status: string;
  phase: string | null;
  timeline: AgentEvent[];
  lastSequence: number;
  iterations: number[]; // iteration indices with a finished loop pass
  awaitingHuman: boolean;
  finished: boolean;
  verdict: string | null;
}

const PHASE_STATUS: Record<string, string> = {
  extract: "extracting",
  generate: "generating",
  design: "testing",
  execute: "executing",
  interpret: "interpreting",
};

export function initialView(sessionId: string, status = "created"): SessionView {
  return {
    sessionId,
    status,
    phase: null,
    timeline: [],
    lastSequence: 0,
    iterations: [],
    awaitingHuman: false,
    finished: false,
    verdict: null,
  };
}

export function applyEvent(view: SessionView, ev: AgentEvent): SessionView {
  if (ev.sequence <= view.lastSequence) return view; // replay after resume
  const next: SessionView = {
    ...view,
    timeline: [...view.timeline, ev],
    lastSequence: ev.sequence,
  };
  switch (ev.kind) {
    case "phase_started": {
      const phase = String(ev.payload.phase ?? "");
      next.phase = phase;
      next.status = PHASE_STATUS[phase] ?? next.status;
      break;
    }
    case "iteration_done": {
      const index = Number(ev.payload.iteration ?? next.iterations.length + 1);
      if (!next.iterations.includes(index)) {
        next.iterations = [...next.iterations, index];
      }
      if (ev.payload.awaiting_human) {
        next.awaitingHuman = true;
        next.status = "awaiting_human";
      }
      break;
    }
    case "human_feedback_applied":
      next.awaitingHuman = false;
      break;
    case "session_done":
      next.status = String(ev.payload.status ?? next.status);
      next.verdict = ev.payload.verdict == null ? null : String(ev.payload.verdict);
      next.finished = true;
      next.awaitingHuman = false;
      next.phase = null;
      break;
    default:
      break;
  }
  return next;
}

// Refinement text is accepted while the run is live (queued if mid-iteration);
// approval only lands while the session is paused for review.
export function feedbackEnabled(view: SessionView): boolean {
  return !view.finished;
}

export function approveEnabled(view: SessionView): boolean {
  return view.awaitingHuman && !view.finished;
}

export function feedbackDisabledReason(view: SessionView): string {
  if (view.finished) return `session is ${view.status}; feedback is closed`;
  if (!view.awaitingHuman) return "approval opens when the session pauses for review";
  return "";
}
