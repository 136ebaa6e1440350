// DOM rendering, no framework. Containers are rebuilt from state on each
// change; the state layer guarantees timeline order, this layer just draws it.

import type { AgentEvent, IterationRecord, KpiBundle, SessionReport } from "./api.js";
import { diffLines } from "./diff.js";
import { NO_TRAFFIC, formatDuration, formatPercent, formatThroughput, formatMillis, kpiCards } from "./format.js";
import { approveEnabled, feedbackDisabledReason, feedbackEnabled, type SessionView } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

// One human-readable line per event, distinct per kind.
export function describeEvent(ev: AgentEvent): string {
  const p = ev.payload;
  switch (ev.kind) {
    case "phase_started":
      return `phase ${p.phase} started`;
    case "phase_finished":
      return `phase ${p.phase} finished in ${formatDuration(Number(p.duration_s ?? 0))}`;
    case "llm_call":
      return `model call [${p.tag}] to ${p.model} (${formatDuration(Number(p.latency_s ?? 0))})`;
    case "tool_run":
      return `ran case ${p.case_id}: exit ${p.exit_status} in ${formatDuration(Number(p.duration_s ?? 0))}`;
    case "case_result":
      return `case ${p.case_id} ${p.passed ? "passed" : "failed"}: ${p.detail}`;
    case "iteration_done":
      return `iteration ${p.iteration} done: ${p.cases_passed}/${p.cases_total} cases, verdict ${p.verdict}`;
    case "human_feedback_applied":
      return p.approve ? "operator approved the result" : `operator feedback: ${p.text}`;
    case "session_done":
      return `session ${p.status} after ${p.iterations} iteration(s)`;
    default:
      return ev.kind;
  }
}

export function renderTimeline(list: HTMLElement, view: SessionView): void {
  list.textContent = "";
  for (const ev of view.timeline) {
    const item = el("li", `ev ev-${ev.kind}`);
    item.dataset.sequence = String(ev.sequence);
    item.dataset.kind = ev.kind;
    item.appendChild(el("span", "ev-seq", `#${ev.sequence}`));
    item.appendChild(el("span", "ev-kind", ev.kind));
    item.appendChild(el("span", "ev-summary", describeEvent(ev)));
    list.appendChild(item);
  }
}

export function renderStatus(chip: HTMLElement, phaseEl: HTMLElement, view: SessionView): void {
  chip.textContent = view.status;
  chip.className = `status-chip status-${view.status}`;
  phaseEl.textContent = view.phase ? `phase: ${view.phase}` : "";
}

export function renderKpiDashboard(container: HTMLElement, kpis: KpiBundle | null | undefined): void {
  container.textContent = "";
  const cards = kpiCards(kpis);
  if (cards === null) {
    container.appendChild(el("p", "kpi-empty", NO_TRAFFIC));
    return;
  }
  const grid = el("div", "kpi-cards");
  for (const card of cards) {
    const node = el("div", "kpi-card");
    node.appendChild(el("div", "kpi-label", card.label));
    node.appendChild(el("div", "kpi-value", card.value));
    grid.appendChild(node);
  }
  container.appendChild(grid);

  const table = el("table", "flow-table");
  const head = el("tr");
  for (const col of ["flow", "throughput", "mean delay", "loss", "jitter", "tx", "rx"]) {
    head.appendChild(el("th", undefined, col));
  }
  table.appendChild(head);
  for (const flow of kpis!.flows) {
    const row = el("tr", "flow-row");
    row.appendChild(el("td", undefined, String(flow.flow_id)));
    row.appendChild(el("td", undefined, formatThroughput(flow.throughput_bps)));
    row.appendChild(el("td", undefined, formatMillis(flow.mean_delay_s)));
    row.appendChild(el("td", undefined, formatPercent(flow.loss_ratio)));
    row.appendChild(el("td", undefined, formatMillis(flow.mean_jitter_s)));
    row.appendChild(el("td", undefined, String(flow.tx_packets)));
    row.appendChild(el("td", undefined, String(flow.rx_packets)));
    table.appendChild(row);
  }
  container.appendChild(table);
}

export function renderCaseTable(container: HTMLElement, record: IterationRecord): void {
  container.textContent = "";
  const cases = record.report?.cases ?? [];
  if (cases.length === 0) {
    container.appendChild(el("p", "cases-empty", "no test cases ran"));
    return;
  }
  const table = el("table", "case-table");
  for (const c of cases) {
    const row = el("tr", c.passed ? "case-pass" : "case-fail");
    row.appendChild(el("td", undefined, c.passed ? "PASS" : "FAIL"));
    row.appendChild(el("td", undefined, c.case_id));
    row.appendChild(el("td", undefined, c.kind));
    row.appendChild(el("td", undefined, c.detail));
    table.appendChild(row);
  }
  container.appendChild(table);
}

// Script text with a diff against the previous iteration when there is one.
export function renderScriptPanel(
  container: HTMLElement,
  record: IterationRecord,
  previous?: IterationRecord | null,
): void {
  container.textContent = "";
  const current = record.script?.source_text;
  if (!current) {
    container.appendChild(el("p", "script-empty", "no script recorded"));
    return;
  }
  const pre = el("pre", "script-view");
  if (previous?.script?.source_text) {
    for (const line of diffLines(previous.script.source_text, current)) {
      const marker = line.op === "add" ? "+" : line.op === "del" ? "-" : " ";
      pre.appendChild(el("span", `diff-${line.op}`, `${marker} ${line.text}\n`));
    }
  } else {
    pre.textContent = current;
  }
  container.appendChild(pre);
}

export function renderInterpretation(container: HTMLElement, record: IterationRecord): void {
  container.textContent = "";
  const interp = record.interpretation;
  if (!interp) {
    container.appendChild(el("p", "interp-empty", "no interpretation yet"));
    return;
  }
  container.appendChild(el("span", `verdict verdict-${interp.verdict}`, interp.verdict));
  container.appendChild(el("p", "interp-summary", interp.summary));
  for (const finding of interp.findings ?? []) {
    container.appendChild(el("p", "interp-finding", typeof finding === "string" ? finding : JSON.stringify(finding)));
  }
}

export interface TabsHandlers {
  onSelect: (index: number) => void;
}

// One tab per finished iteration; tab content is read from the report
// document fetched after each iteration_done.
export function renderIterationTabs(
  nav: HTMLElement,
  body: HTMLElement,
  view: SessionView,
  report: SessionReport | null,
  activeIndex: number,
  handlers: TabsHandlers,
): void {
  nav.textContent = "";
  for (const index of view.iterations) {
    const tab = el("button", index === activeIndex ? "tab tab-active" : "tab", `iteration ${index}`);
    tab.type = "button";
    tab.dataset.iteration = String(index);
    tab.addEventListener("click", () => handlers.onSelect(index));
    nav.appendChild(tab);
  }

  body.textContent = "";
  if (view.iterations.length === 0) {
    body.appendChild(el("p", "tabs-empty", "no finished iterations yet"));
    return;
  }
  const record = report?.iterations.find((it) => it.index === activeIndex);
  if (!record) {
    body.appendChild(el("p", "tabs-loading", `waiting for iteration ${activeIndex} report`));
    return;
  }
  const previous = report!.iterations.find((it) => it.index === activeIndex - 1) ?? null;

  const meta = el("div", "iter-meta");
  meta.appendChild(el("span", "iter-wall", `wall ${formatDuration(record.wall_s)}`));
  if (record.feedback_source) {
    meta.appendChild(el("span", "iter-feedback-source", `feedback source: ${record.feedback_source}`));
  }
  body.appendChild(meta);

  const script = el("section", "panel panel-script");
  script.appendChild(el("h3", undefined, previous ? "script (diff vs. previous)" : "script"));
  renderScriptPanel(script, record, previous);
  body.appendChild(script);

  const cases = el("section", "panel panel-cases");
  cases.appendChild(el("h3", undefined, "test results"));
  renderCaseTable(cases, record);
  body.appendChild(cases);

  const kpis = el("section", "panel panel-kpis");
  kpis.appendChild(el("h3", undefined, "KPIs"));
  renderKpiDashboard(kpis, record.report?.kpis ?? null);
  body.appendChild(kpis);

  const interp = el("section", "panel panel-interp");
  interp.appendChild(el("h3", undefined, "interpretation"));
  renderInterpretation(interp, record);
  body.appendChild(interp);
}

export interface FeedbackElements {
  form: HTMLElement;
  text: HTMLTextAreaElement;
  send: HTMLButtonElement;
  approve: HTMLButtonElement;
}

export function renderFeedbackControls(els: FeedbackElements, view: SessionView): void {
  const open = feedbackEnabled(view);
  els.text.disabled = !open;
  els.send.disabled = !open;
  els.approve.disabled = !approveEnabled(view);
  const reason = feedbackDisabledReason(view);
  els.form.title = reason;
  els.form.classList.toggle("feedback-closed", view.finished);
}
