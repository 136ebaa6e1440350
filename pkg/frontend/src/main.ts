// App wiring: requirement form -> session creation -> live event stream ->
// timeline, iteration tabs, KPI dashboard, feedback controls. The only
// configuration is the service base URL.

import { ApiClient, ApiError, type SessionReport } from "./api.js";
import { followSession } from "./sse.js";
import { applyEvent, initialView, type SessionView } from "./state.js";
import {
  renderFeedbackControls,
  renderIterationTabs,
  renderStatus,
  renderTimeline,
  type FeedbackElements,
} from "./render.js";

const SHELL = `
  <form class="req-form">
    <h2>new session</h2>
    <textarea class="req-text" rows="4" placeholder="Describe the scenario to simulate..."></textarea>
    <div class="req-row">
      <label><input type="checkbox" class="req-pause" checked> pause each iteration for review</label>
      <label>model
        <select class="req-model">
          <option value="">default</option>
          <option value="gpt-4o-mini">gpt-4o-mini</option>
          <option value="gpt-4o">gpt-4o</option>
        </select>
      </label>
      <button type="submit" class="req-submit">run</button>
    </div>
    <p class="form-error" hidden></p>
  </form>
  <section class="session" hidden>
    <header class="session-header">
      <span class="status-chip"></span>
      <span class="phase"></span>
      <span class="session-id"></span>
    </header>
    <div class="columns">
      <ol class="timeline"></ol>
      <section class="iterations">
        <nav class="tabs"></nav>
        <div class="tab-body"></div>
      </section>
    </div>
    <form class="feedback-form">
      <textarea class="fb-text" rows="2" placeholder="Refinement feedback for the next iteration..."></textarea>
      <div class="fb-row">
        <button type="button" class="fb-send">send feedback</button>
        <button type="button" class="fb-approve">approve</button>
      </div>
      <p class="fb-error" hidden></p>
    </form>
  </section>
`;

export interface AppOptions {
  baseUrl?: string;
}

export interface AppHandle {
  root: HTMLElement;
  client: ApiClient;
  view: () => SessionView | null;
  report: () => SessionReport | null;
  streamDone: () => Promise<void> | null;
  stop: () => void;
}

export function initApp(root: HTMLElement, opts: AppOptions = {}): AppHandle {
  const client = new ApiClient(opts.baseUrl ?? "");
  root.innerHTML = SHELL;

  const q = <T extends Element>(sel: string) => root.querySelector(sel) as T;
  const reqForm = q<HTMLFormElement>(".req-form");
  const reqText = q<HTMLTextAreaElement>(".req-text");
  const reqPause = q<HTMLInputElement>(".req-pause");
  const reqModel = q<HTMLSelectElement>(".req-model");
  const formError = q<HTMLParagraphElement>(".form-error");
  const sessionEl = q<HTMLElement>(".session");
  const chip = q<HTMLElement>(".status-chip");
  const phaseEl = q<HTMLElement>(".phase");
  const sessionIdEl = q<HTMLElement>(".session-id");
  const timelineEl = q<HTMLOListElement>(".timeline");
  const tabsNav = q<HTMLElement>(".tabs");
  const tabBody = q<HTMLElement>(".tab-body");
  const fbError = q<HTMLParagraphElement>(".fb-error");
  const feedback: FeedbackElements = {
    form: q<HTMLElement>(".feedback-form"),
    text: q<HTMLTextAreaElement>(".fb-text"),
    send: q<HTMLButtonElement>(".fb-send"),
    approve: q<HTMLButtonElement>(".fb-approve"),
  };

  let view: SessionView | null = null;
  let report: SessionReport | null = null;
  let activeTab = 0;
  let userPinnedTab = false;
  let reportSeq = 0;
  let streamDone: Promise<void> | null = null;
  const abort = new AbortController();

  function showError(target: HTMLParagraphElement, err: unknown): void {
    const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    target.textContent = message;
    target.hidden = false;
  }

  function renderAll(): void {
    if (!view) return;
    renderStatus(chip, phaseEl, view);
    renderTimeline(timelineEl, view);
    renderIterationTabs(tabsNav, tabBody, view, report, activeTab, {
      onSelect(index) {
        activeTab = index;
        userPinnedTab = index !== view!.iterations[view!.iterations.length - 1];
        renderAll();
      },
    });
    renderFeedbackControls(feedback, view);
  }

  // Tab content comes from the report document, re-fetched after the events
  // that can change it. Stale responses (an older trigger resolving late) are
  // dropped so the newest snapshot wins.
  function refreshReport(triggerSeq: number): void {
    if (!view) return;
    client
      .getReport(view.sessionId)
      .then((r) => {
        if (triggerSeq < reportSeq) return;
        reportSeq = triggerSeq;
        report = r;
        renderAll();
      })
      .catch(() => {
        // transient fetch failure; the next trigger retries
      });
  }

  function onEvent(ev: Parameters<typeof applyEvent>[1]): void {
    if (!view) return;
    view = applyEvent(view, ev);
    if (ev.kind === "iteration_done" && !userPinnedTab) {
      activeTab = view.iterations[view.iterations.length - 1];
    }
    renderAll();
    if (ev.kind === "iteration_done" || ev.kind === "human_feedback_applied" || ev.kind === "session_done") {
      refreshReport(ev.sequence);
    }
  }

  reqForm.addEventListener("submit", (e) => {
    e.preventDefault();
    formError.hidden = true;
    const text = reqText.value.trim();
    if (!text) {
      formError.textContent = "requirements must not be empty";
      formError.hidden = false;
      return;
    }
    const model = reqModel.value || undefined;
    client
      .createSession({ model, pause_for_human: reqPause.checked })
      .then((handle) => {
        view = initialView(handle.session_id, handle.status);
        sessionIdEl.textContent = handle.session_id;
        sessionEl.hidden = false;
        reqForm.querySelector<HTMLButtonElement>(".req-submit")!.disabled = true;
        renderAll();
        return client.submitRequirements(handle.session_id, text).then(() => {
          streamDone = followSession((from) => client.eventsUrl(handle.session_id, from), {
            signal: abort.signal,
            onEvent,
          }).then(() => undefined);
        });
      })
      .catch((err) => showError(formError, err));
  });

  function postFeedback(draft: { text: string; approve: boolean }): void {
    if (!view) return;
    fbError.hidden = true;
    client
      .sendFeedback(view.sessionId, draft)
      .then(() => {
        feedback.text.value = "";
      })
      .catch((err) => showError(fbError, err));
  }

  feedback.send.addEventListener("click", () => postFeedback({ text: feedback.text.value, approve: false }));
  feedback.approve.addEventListener("click", () => postFeedback({ text: "", approve: true }));

  return {
    root,
    client,
    view: () => view,
    report: () => report,
    streamDone: () => streamDone,
    stop: () => abort.abort(),
  };
}
